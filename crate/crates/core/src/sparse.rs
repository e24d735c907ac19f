//! Compressed sparse row matrices and the Krylov solvers used by the time
//! steppers.
//!
//! Both solvers apply a Jacobi (diagonal) preconditioner. Convergence is
//! measured by the true relative residual `‖Ax − b‖ / ‖b‖`; when the
//! recursively updated residual claims convergence but the true one does not,
//! the iteration restarts from the true residual.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{method}: non-finite value after {iterations} iterations")]
    Breakdown {
        method: &'static str,
        iterations: usize,
    },
    #[error("{method}: no convergence in {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("dimension mismatch: matrix is {rows}x{cols}, vector has length {len}")]
    Dimension { rows: usize, cols: usize, len: usize },
}

/// Outcome of one iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl SolverReport {
    /// Turns a non-converged report into an error.
    pub fn require_converged(self, method: &'static str) -> Result<Self, SolverError> {
        if self.converged {
            Ok(self)
        } else {
            Err(SolverError::NotConverged {
                method,
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays.
    ///
    /// # Panics
    ///
    /// If the arrays are inconsistent or columns are not strictly increasing
    /// within a row.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(row_ptr.len(), nrows + 1);
        assert_eq!(col_idx.len(), values.len());
        assert_eq!(*row_ptr.last().unwrap(), col_idx.len());
        for r in 0..nrows {
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "row {r} not strictly sorted");
            assert!(cols.iter().all(|&c| c < ncols));
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.values.copy_from_slice(diag);
        m
    }

    /// Dense row-major input; exact zeros are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = TripletBuilder::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.add(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the stored values; the pattern stays fixed.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `out = A x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * y[self.col_idx[k]];
            }
            acc += xr * row;
        }
        acc
    }

    /// Largest `|a_ij − a_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// `A ⊗ I₃`: every scalar entry becomes a 3×3 diagonal block, with the
    /// three components of a node interleaved.
    pub fn kron_identity3(&self) -> Self {
        let mut row_ptr = Vec::with_capacity(3 * self.nrows + 1);
        let mut col_idx = Vec::with_capacity(3 * self.nnz());
        let mut values = Vec::with_capacity(3 * self.nnz());
        row_ptr.push(0);
        for r in 0..self.nrows {
            for c3 in 0..3 {
                for (c, v) in self.row(r) {
                    col_idx.push(3 * c + c3);
                    values.push(v);
                }
                row_ptr.push(col_idx.len());
            }
        }
        CsrMatrix {
            nrows: 3 * self.nrows,
            ncols: 3 * self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense copy, row-major. Intended for small test systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    /// Linear combination `a·self + b·other` of two matrices with the same
    /// shape; the pattern is the union of both patterns.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..self.nrows {
            let mut x = self.row(r).peekable();
            let mut y = other.row(r).peekable();
            loop {
                match (x.peek().copied(), y.peek().copied()) {
                    (Some((cx, vx)), Some((cy, vy))) if cx == cy => {
                        col_idx.push(cx);
                        values.push(a * vx + b * vy);
                        x.next();
                        y.next();
                    }
                    (Some((cx, vx)), Some((cy, _))) if cx < cy => {
                        col_idx.push(cx);
                        values.push(a * vx);
                        x.next();
                    }
                    (_, Some((cy, vy))) => {
                        col_idx.push(cy);
                        values.push(b * vy);
                        y.next();
                    }
                    (Some((cx, vx)), None) => {
                        col_idx.push(cx);
                        values.push(a * vx);
                        x.next();
                    }
                    (None, None) => break,
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Coordinate-format accumulator; duplicate entries are summed on
/// [`TripletBuilder::build`].
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r, c, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: &CsrMatrix, b: &[f64]) -> Result<(), SolverError> {
    if a.nrows != a.ncols || b.len() != a.nrows {
        return Err(SolverError::Dimension {
            rows: a.nrows,
            cols: a.ncols,
            len: b.len(),
        });
    }
    Ok(())
}

fn inverse_diagonal(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect()
}

fn true_residual(a: &CsrMatrix, x: &[f64], b: &[f64], r: &mut [f64]) {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// `a`, starting from zero.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolverReport), SolverError> {
    const METHOD: &str = "cg";
    check_dims(a, b)?;
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(SolverError::Breakdown {
            method: METHOD,
            iterations: 0,
        });
    }
    if b_norm == 0.0 {
        return Ok((x, SolverReport { iterations: 0, residual: 0.0, converged: true }));
    }
    let inv_diag = inverse_diagonal(a);
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < max_iter {
        a.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        let step = rz / pq;
        if !step.is_finite() {
            return Err(SolverError::Breakdown {
                method: METHOD,
                iterations,
            });
        }
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        iterations += 1;
        residual = norm(&r) / b_norm;
        if !residual.is_finite() {
            return Err(SolverError::Breakdown {
                method: METHOD,
                iterations,
            });
        }
        if residual <= tol {
            true_residual(a, &x, b, &mut r);
            residual = norm(&r) / b_norm;
            if residual <= tol {
                return Ok((x, SolverReport { iterations, residual, converged: true }));
            }
            // Recursive residual drifted; restart from the true one.
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, SolverReport { iterations, residual, converged: false }))
}

/// Preconditioners for [`bicgstab_solve_with`].
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    /// Inverse of the diagonal.
    Jacobi(Vec<f64>),
    /// Inverses of the 2×2 diagonal blocks, row-major.
    BlockJacobi2(Vec<[f64; 4]>),
}

impl Preconditioner {
    pub fn jacobi(a: &CsrMatrix) -> Self {
        Preconditioner::Jacobi(inverse_diagonal(a))
    }

    /// Block Jacobi with 2×2 blocks on dofs `(2i, 2i+1)`. Singular blocks
    /// fall back to the identity.
    ///
    /// # Panics
    ///
    /// If the dimension is odd.
    pub fn block_jacobi2(a: &CsrMatrix) -> Self {
        assert_eq!(a.nrows() % 2, 0, "block Jacobi needs an even dimension");
        let blocks = (0..a.nrows() / 2)
            .map(|i| {
                let (p, q) = (2 * i, 2 * i + 1);
                let (a11, a12, a21, a22) = (a.get(p, p), a.get(p, q), a.get(q, p), a.get(q, q));
                let det = a11 * a22 - a12 * a21;
                if det != 0.0 && det.is_finite() {
                    [a22 / det, -a12 / det, -a21 / det, a11 / det]
                } else {
                    [1.0, 0.0, 0.0, 1.0]
                }
            })
            .collect();
        Preconditioner::BlockJacobi2(blocks)
    }

    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(d) => {
                for ((o, r), d) in out.iter_mut().zip(r).zip(d) {
                    *o = r * d;
                }
            }
            Preconditioner::BlockJacobi2(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    let (x, y) = (r[2 * i], r[2 * i + 1]);
                    out[2 * i] = b[0] * x + b[1] * y;
                    out[2 * i + 1] = b[2] * x + b[3] * y;
                }
            }
        }
    }
}

/// Jacobi-preconditioned BiCGStab for general nonsingular `a`, starting from
/// zero.
pub fn bicgstab_solve(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolverReport), SolverError> {
    check_dims(a, b)?;
    bicgstab_solve_with(a, b, tol, max_iter, &Preconditioner::jacobi(a))
}

/// Right-preconditioned BiCGStab starting from zero. A vanishing inner
/// product restarts the iteration with the current residual as shadow
/// vector; only non-finite iterates are reported as breakdown.
pub fn bicgstab_solve_with(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    precond: &Preconditioner,
) -> Result<(Vec<f64>, SolverReport), SolverError> {
    const METHOD: &str = "bicgstab";
    check_dims(a, b)?;
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    let breakdown = |iterations| SolverError::Breakdown {
        method: METHOD,
        iterations,
    };
    if !b_norm.is_finite() {
        return Err(breakdown(0));
    }
    if b_norm == 0.0 {
        return Ok((x, SolverReport { iterations: 0, residual: 0.0, converged: true }));
    }
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut iterations = 0;
    let mut residual = 1.0;
    let mut fresh = true;

    macro_rules! restart {
        () => {{
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|x| *x = 0.0);
            v.iter_mut().for_each(|x| *x = 0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
        }};
    }

    while iterations < max_iter {
        let rho_new = dot(&r_hat, &r);
        if !rho_new.is_finite() {
            return Err(breakdown(iterations));
        }
        if rho_new.abs() <= 1e-30 * norm(&r_hat) * norm(&r) {
            if fresh {
                return Err(breakdown(iterations));
            }
            restart!();
            fresh = true;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if !(rv.abs() > 1e-30 * norm(&r_hat) * norm(&v)) {
            if !rv.is_finite() {
                return Err(breakdown(iterations));
            }
            if fresh {
                return Err(breakdown(iterations));
            }
            restart!();
            fresh = true;
            continue;
        }
        fresh = false;
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        iterations += 1;
        if norm(&s) / b_norm <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            true_residual(a, &x, b, &mut r);
            residual = norm(&r) / b_norm;
            if !residual.is_finite() {
                return Err(breakdown(iterations));
            }
            if residual <= tol {
                return Ok((x, SolverReport { iterations, residual, converged: true }));
            }
            restart!();
            continue;
        }
        precond.apply(&s, &mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        residual = norm(&r) / b_norm;
        if !residual.is_finite() {
            return Err(breakdown(iterations));
        }
        if residual <= tol {
            true_residual(a, &x, b, &mut r);
            residual = norm(&r) / b_norm;
            if residual <= tol {
                return Ok((x, SolverReport { iterations, residual, converged: true }));
            }
            restart!();
        } else if omega == 0.0 {
            restart!();
        }
    }
    Ok((x, SolverReport { iterations, residual, converged: false }))
}

/// Homogeneous Dirichlet conditions by symmetric elimination: the rows and
/// columns of `constrained` dofs are zeroed, their diagonal set to one and
/// their right-hand side entries set to zero. Symmetry and definiteness are
/// preserved.
pub fn apply_dirichlet(a: &CsrMatrix, b: &[f64], constrained: &[usize]) -> (CsrMatrix, Vec<f64>) {
    let mut mask = vec![false; a.nrows];
    for &d in constrained {
        mask[d] = true;
    }
    let mut out = a.clone();
    for r in 0..out.nrows {
        for k in out.row_ptr[r]..out.row_ptr[r + 1] {
            let c = out.col_idx[k];
            if mask[r] || mask[c] {
                out.values[k] = if r == c { 1.0 } else { 0.0 };
            }
        }
    }
    let mut rhs = b.to_vec();
    for &d in constrained {
        rhs[d] = 0.0;
    }
    (out, rhs)
}
