//! Tangent-plane solvers for the magnetization velocity.
//!
//! Every scheme here solves one linear system per step of the form
//!
//! ```text
//! α⟨v, φ⟩_L + ⟨a × v, φ⟩_L + kθ⟨∇v, ∇φ⟩ = −⟨∇mⁱ, ∇φ⟩ + ⟨h, φ⟩_L
//! ```
//!
//! for `v` with `v(z) ⊥ a(z)` at every node, where `a` is the anchor field
//! and `h` collects the magnetoelastic and Zeeman fields. The constraint is
//! removed by writing `v(z) = c₁ t₁(z) + c₂ t₂(z)` in a per-node tangent
//! basis, which leaves a positive definite system with two unknowns per
//! node. `m^{i+1} = mⁱ + k v` follows.

use crate::fem::{nodal_strains, NodalVectorField};
use crate::material::{elastic_effective_field, MaterialParams};
use crate::mesh::TetMesh;
use crate::sparse::{bicgstab_solve_with, CsrMatrix, Preconditioner, SolverReport};
use crate::{Error, Result, Vec3};

/// Below this nodal length the extrapolated magnetization has no usable
/// tangent plane.
pub const DEGENERATE_NORM: f64 = 1e-10;
/// Below this nodal length [`nodal_project`] refuses to normalize.
pub const PROJECTION_NORM: f64 = 1e-12;

/// `3/2 mⁱ − 1/2 m^{i−1}`, checked for nodal degeneracy.
pub fn extrapolate_half(m_curr: &NodalVectorField, m_prev: &NodalVectorField) -> Result<NodalVectorField> {
    let hat = NodalVectorField::lin_comb(1.5, m_curr, -0.5, m_prev);
    if let Some((node, norm)) = hat
        .iter()
        .map(|v| v.norm())
        .enumerate()
        .find(|(_, n)| !(*n >= DEGENERATE_NORM))
    {
        return Err(Error::DegenerateExtrapolation { node, norm });
    }
    Ok(hat)
}

/// Nodal renormalization onto the unit sphere.
pub fn nodal_project(field: &NodalVectorField) -> Result<NodalVectorField> {
    let mut out = field.clone();
    for (z, v) in field.iter().enumerate() {
        let norm = v.norm();
        if !(norm > PROJECTION_NORM) {
            return Err(Error::ZeroProjection { node: z, norm });
        }
        out.set(z, v / norm);
    }
    Ok(out)
}

/// Orthonormal basis of the tangent plane at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    pub t1: Vec<Vec3>,
    pub t2: Vec<Vec3>,
}

impl TangentBasis {
    pub fn num_nodes(&self) -> usize {
        self.t1.len()
    }

    /// `v(z) = c[2z] t₁(z) + c[2z+1] t₂(z)`.
    pub fn expand(&self, c: &[f64]) -> NodalVectorField {
        NodalVectorField::from_fn(self.num_nodes(), |z| self.t1[z] * c[2 * z] + self.t2[z] * c[2 * z + 1])
    }

    /// Coefficients of the tangential part of `v`.
    pub fn restrict(&self, v: &NodalVectorField) -> Vec<f64> {
        let mut c = Vec::with_capacity(2 * self.num_nodes());
        for (z, vz) in v.iter().enumerate() {
            c.push(self.t1[z].dot(&vz));
            c.push(self.t2[z].dot(&vz));
        }
        c
    }
}

/// Tangent frame of a single nonzero vector. `t₁` is the coordinate axis
/// least aligned with `a` (lowest index on ties) projected onto the plane
/// orthogonal to `a`, and `t₂ = â × t₁`.
pub fn tangent_frame(a: &Vec3) -> (Vec3, Vec3) {
    let ah = a.normalize();
    let mut j = 0;
    for i in 1..3 {
        if ah[i].abs() < ah[j].abs() {
            j = i;
        }
    }
    let mut e = Vec3::zeros();
    e[j] = 1.0;
    let t1 = (e - ah * ah[j]).normalize();
    let t2 = ah.cross(&t1).normalize();
    (t1, t2)
}

pub fn build_tangent_basis(anchor: &NodalVectorField) -> Result<TangentBasis> {
    let n = anchor.num_nodes();
    let mut t1 = Vec::with_capacity(n);
    let mut t2 = Vec::with_capacity(n);
    for (node, a) in anchor.iter().enumerate() {
        let norm = a.norm();
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateExtrapolation { node, norm });
        }
        let (a1, a2) = tangent_frame(&a);
        t1.push(a1);
        t2.push(a2);
    }
    Ok(TangentBasis { t1, t2 })
}

/// Nodal magnetoelastic field `3λ₁₀₀ dev(σ(z)) m(z)` with the nodal strain
/// of `u` from [`nodal_strains`].
pub fn magnetoelastic_field(
    mesh: &TetMesh,
    material: &MaterialParams,
    u: &NodalVectorField,
    m: &NodalVectorField,
) -> Vec<Vec3> {
    if material.lambda100 == 0.0 {
        return vec![Vec3::zeros(); mesh.num_nodes()];
    }
    nodal_strains(mesh, u)
        .iter()
        .zip(m.iter())
        .map(|(eps, mz)| elastic_effective_field(&material.stress(eps, &mz), &mz, material.lambda100))
        .collect()
}

/// Coefficients of the tangent-plane system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPlaneParams {
    pub alpha: f64,
    /// Implicit weight of the exchange term: ½ for the midpoint rule, 1 for
    /// the first-order scheme.
    pub theta: f64,
    /// Whether the skew term `⟨a × v, φ⟩_L` is present.
    pub precession: bool,
}

/// Data of one velocity solve.
#[derive(Debug, Clone, Copy)]
pub struct VelocityProblem<'a> {
    pub anchor: &'a NodalVectorField,
    pub m_curr: &'a NodalVectorField,
    /// Nodal field `h(z)` entering the vertex-rule load.
    pub field: &'a [Vec3],
    pub k: f64,
    pub params: TangentPlaneParams,
}

/// Reusable assembler and solver for the reduced tangent-plane system.
#[derive(Debug, Clone)]
pub struct TangentPlaneSolver {
    stiffness: CsrMatrix,
    weights: Vec<f64>,
    pattern: CsrMatrix,
    pub tol: f64,
    /// `None` means ten times the number of unknowns.
    pub max_iter: Option<usize>,
}

impl TangentPlaneSolver {
    pub fn new(stiffness: CsrMatrix, weights: Vec<f64>, tol: f64) -> Self {
        let n = stiffness.nrows();
        let mut row_ptr = Vec::with_capacity(2 * n + 1);
        let mut col_idx = Vec::with_capacity(4 * stiffness.nnz());
        row_ptr.push(0);
        for z in 0..n {
            for _ in 0..2 {
                for (w, _) in stiffness.row(z) {
                    col_idx.push(2 * w);
                    col_idx.push(2 * w + 1);
                }
                row_ptr.push(col_idx.len());
            }
        }
        let values = vec![0.0; col_idx.len()];
        let pattern = CsrMatrix::from_raw(2 * n, 2 * n, row_ptr, col_idx, values);
        TangentPlaneSolver {
            stiffness,
            weights,
            pattern,
            tol,
            max_iter: None,
        }
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Reduced matrix and right-hand side in the basis of `p.anchor`.
    pub fn assemble(&self, p: &VelocityProblem<'_>, basis: &TangentBasis) -> (CsrMatrix, Vec<f64>) {
        let n = self.stiffness.nrows();
        let mut a = self.pattern.clone();
        let rp = self.stiffness.row_ptr().to_vec();
        let red_rp = a.row_ptr().to_vec();
        let kt = p.k * p.params.theta;
        let values = a.values_mut();
        let mut rhs = vec![0.0; 2 * n];
        for z in 0..n {
            let (t1z, t2z) = (basis.t1[z], basis.t2[z]);
            let mut km = Vec3::zeros();
            for (off, (w, kzw)) in self.stiffness.row(z).enumerate() {
                let (t1w, t2w) = (basis.t1[w], basis.t2[w]);
                let block = [
                    [t1z.dot(&t1w), t1z.dot(&t2w)],
                    [t2z.dot(&t1w), t2z.dot(&t2w)],
                ];
                for (prow, brow) in block.iter().enumerate() {
                    let base = red_rp[2 * z + prow] + 2 * off;
                    for (q, b) in brow.iter().enumerate() {
                        values[base + q] = kt * kzw * b;
                    }
                }
                km += p.m_curr.get(w) * kzw;
                if w == z {
                    let wz = self.weights[z];
                    let diag = 2 * off;
                    values[red_rp[2 * z] + diag] += p.params.alpha * wz;
                    values[red_rp[2 * z + 1] + diag + 1] += p.params.alpha * wz;
                    if p.params.precession {
                        let s = wz * p.anchor.get(z).norm();
                        values[red_rp[2 * z] + diag + 1] -= s;
                        values[red_rp[2 * z + 1] + diag] += s;
                    }
                }
            }
            debug_assert_eq!(red_rp[2 * z + 1] - red_rp[2 * z], 2 * (rp[z + 1] - rp[z]));
            let load = p.field[z] * self.weights[z] - km;
            rhs[2 * z] = t1z.dot(&load);
            rhs[2 * z + 1] = t2z.dot(&load);
        }
        (a, rhs)
    }

    /// Solves for the tangential velocity.
    pub fn solve(&self, p: &VelocityProblem<'_>) -> Result<(NodalVectorField, SolverReport)> {
        let basis = build_tangent_basis(p.anchor)?;
        let (a, rhs) = self.assemble(p, &basis);
        let max_iter = self.max_iter.unwrap_or(10 * rhs.len());
        let precond = Preconditioner::block_jacobi2(&a);
        let (c, report) = bicgstab_solve_with(&a, &rhs, self.tol, max_iter, &precond)?;
        let report = report.require_converged("bicgstab")?;
        Ok((basis.expand(&c), report))
    }
}

/// Which initial-step inputs the midpoint solve receives.
#[derive(Debug, Clone, Copy)]
pub enum MidpointInputs<'a> {
    /// First step: anchor `m⁰`, field from `(u⁰, m⁰)` without projection.
    Init {
        m0: &'a NodalVectorField,
        u0: &'a NodalVectorField,
    },
    /// Later steps: anchor `m̂ = 3/2 mⁱ − 1/2 m^{i−1}`, field from the
    /// extrapolated displacement and the projected anchor.
    Loop {
        m_curr: &'a NodalVectorField,
        m_prev: &'a NodalVectorField,
        u_curr: &'a NodalVectorField,
        u_prev: &'a NodalVectorField,
    },
}

/// Result of one velocity solve together with what the diagnostics need.
#[derive(Debug, Clone)]
pub struct VelocityStep {
    pub v: NodalVectorField,
    pub anchor: NodalVectorField,
    pub field: Vec<Vec3>,
    pub report: SolverReport,
}

/// Midpoint tangent-plane step at time `t = t_i`; the Zeeman field is taken
/// at `t + k/2`. With `precession` off the skew term is dropped.
pub fn solve_midpoint_velocity(
    solver: &TangentPlaneSolver,
    mesh: &TetMesh,
    material: &MaterialParams,
    k: f64,
    t: f64,
    inputs: MidpointInputs<'_>,
    precession: bool,
) -> Result<VelocityStep> {
    let (anchor, m_curr, field) = match inputs {
        MidpointInputs::Init { m0, u0 } => (m0.clone(), m0, magnetoelastic_field(mesh, material, u0, m0)),
        MidpointInputs::Loop {
            m_curr,
            m_prev,
            u_curr,
            u_prev,
        } => {
            let hat = extrapolate_half(m_curr, m_prev)?;
            let field = if material.lambda100 == 0.0 {
                vec![Vec3::zeros(); mesh.num_nodes()]
            } else {
                let u_hat = NodalVectorField::lin_comb(1.5, u_curr, -0.5, u_prev);
                magnetoelastic_field(mesh, material, &u_hat, &nodal_project(&hat)?)
            };
            (hat, m_curr, field)
        }
    };
    let f = material.zeeman.at(t + 0.5 * k);
    let field: Vec<Vec3> = field.into_iter().map(|h| h + f).collect();
    let params = TangentPlaneParams {
        alpha: material.alpha,
        theta: 0.5,
        precession,
    };
    let (v, report) = solver.solve(&VelocityProblem {
        anchor: &anchor,
        m_curr,
        field: &field,
        k,
        params,
    })?;
    Ok(VelocityStep { v, anchor, field, report })
}

/// First-order tangent-plane step: anchor `mⁱ`, fully implicit exchange,
/// field from `(uⁱ, Π mⁱ)` and `f(t)`.
pub fn solve_first_order_tps(
    solver: &TangentPlaneSolver,
    mesh: &TetMesh,
    material: &MaterialParams,
    k: f64,
    t: f64,
    m_curr: &NodalVectorField,
    u_curr: &NodalVectorField,
) -> Result<VelocityStep> {
    let field = if material.lambda100 == 0.0 {
        vec![Vec3::zeros(); mesh.num_nodes()]
    } else {
        magnetoelastic_field(mesh, material, u_curr, &nodal_project(m_curr)?)
    };
    let f = material.zeeman.at(t);
    let field: Vec<Vec3> = field.into_iter().map(|h| h + f).collect();
    let params = TangentPlaneParams {
        alpha: material.alpha,
        theta: 1.0,
        precession: true,
    };
    let (v, report) = solver.solve(&VelocityProblem {
        anchor: m_curr,
        m_curr,
        field: &field,
        k,
        params,
    })?;
    Ok(VelocityStep {
        v,
        anchor: m_curr.clone(),
        field,
        report,
    })
}

/// `m + k v`.
pub fn update_magnetization(m_curr: &NodalVectorField, v: &NodalVectorField, k: f64) -> NodalVectorField {
    NodalVectorField::lin_comb(1.0, m_curr, k, v)
}

/// `max_z |v(z)·a(z)|`.
pub fn orthogonality_residual(v: &NodalVectorField, anchor: &NodalVectorField) -> f64 {
    v.iter().zip(anchor.iter()).map(|(v, a)| v.dot(&a).abs()).fold(0.0, f64::max)
}

/// Terms of the discrete energy balance of one tangent-plane step,
///
/// ```text
/// ½‖∇m^{i+1}‖² + αk‖v‖²_L + (θ − ½)k²‖∇v‖² = ½‖∇mⁱ‖² + k⟨h, v⟩_L
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub exchange_new: f64,
    pub dissipation: f64,
    pub stabilization: f64,
    pub exchange_old: f64,
    pub work: f64,
}

impl EnergyBalance {
    pub fn compute(
        solver: &TangentPlaneSolver,
        m_curr: &NodalVectorField,
        m_next: &NodalVectorField,
        step: &VelocityStep,
        k: f64,
        params: TangentPlaneParams,
    ) -> Self {
        use crate::fem::{dirichlet_energy, scalar_form};
        let kmat = solver.stiffness();
        let w = solver.weights();
        let v = &step.v;
        let field = NodalVectorField::from_vecs(&step.field);
        EnergyBalance {
            exchange_new: dirichlet_energy(kmat, m_next),
            dissipation: params.alpha * k * crate::fem::lumped_dot(w, v, v),
            stabilization: (params.theta - 0.5) * k * k * scalar_form(kmat, v, v),
            exchange_old: dirichlet_energy(kmat, m_curr),
            work: k * crate::fem::lumped_dot(w, &field, v),
        }
    }

    /// Residual normalized by the sum of the term magnitudes.
    pub fn relative_residual(&self) -> f64 {
        let lhs = self.exchange_new + self.dissipation + self.stabilization;
        let rhs = self.exchange_old + self.work;
        let scale = self.exchange_new.abs()
            + self.dissipation.abs()
            + self.stabilization.abs()
            + self.exchange_old.abs()
            + self.work.abs();
        if scale == 0.0 {
            0.0
        } else {
            (lhs - rhs).abs() / scale
        }
    }
}
