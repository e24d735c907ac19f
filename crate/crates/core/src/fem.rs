//! P1 finite element forms on a [`TetMesh`].
//!
//! Scalar forms (`mass`, `stiffness`) act on each component of a vector field
//! separately. Vector forms use interleaved dofs: component `c` of node `z`
//! is dof `3z + c`.
//!
//! Zero-order terms with solution-dependent coefficients are integrated with
//! the vertex rule, whose weights are [`TetMesh::node_weights`]. Gradient
//! terms and the inertia term are integrated exactly.

use rayon::prelude::*;

use crate::material::MaterialParams;
use crate::mesh::{ElementGeometry, TetMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::{Mat3, Vec3};

/// A P1 vector field: one 3-vector per mesh node, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalVectorField {
    data: Vec<f64>,
}

impl NodalVectorField {
    pub fn zeros(num_nodes: usize) -> Self {
        NodalVectorField {
            data: vec![0.0; 3 * num_nodes],
        }
    }

    pub fn constant(num_nodes: usize, c: Vec3) -> Self {
        Self::from_fn(num_nodes, |_| c)
    }

    pub fn from_fn(num_nodes: usize, mut f: impl FnMut(usize) -> Vec3) -> Self {
        let mut data = Vec::with_capacity(3 * num_nodes);
        for z in 0..num_nodes {
            data.extend_from_slice(f(z).as_slice());
        }
        NodalVectorField { data }
    }

    pub fn from_vecs(values: &[Vec3]) -> Self {
        Self::from_fn(values.len(), |z| values[z])
    }

    /// Wraps a flat vector of length `3·nodes`.
    ///
    /// # Panics
    ///
    /// If the length is not a multiple of three.
    pub fn from_flat(data: Vec<f64>) -> Self {
        assert_eq!(data.len() % 3, 0, "flat field length must be a multiple of 3");
        NodalVectorField { data }
    }

    pub fn num_nodes(&self) -> usize {
        self.data.len() / 3
    }

    pub fn get(&self, z: usize) -> Vec3 {
        Vec3::new(self.data[3 * z], self.data[3 * z + 1], self.data[3 * z + 2])
    }

    pub fn set(&mut self, z: usize, v: Vec3) {
        self.data[3 * z..3 * z + 3].copy_from_slice(v.as_slice());
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Vec3> + '_ {
        self.data.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `a·x + b·y`.
    pub fn lin_comb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        assert_eq!(x.data.len(), y.data.len());
        NodalVectorField {
            data: x.data.iter().zip(&y.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, x) in self.data.iter_mut().zip(&x.data) {
            *s += a * x;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        NodalVectorField {
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sets every Dirichlet node to zero.
    pub fn zero_nodes(&mut self, nodes: &[usize]) {
        for &z in nodes {
            self.set(z, Vec3::zeros());
        }
    }
}

/// Constrained dof indices of the Dirichlet nodes in the interleaved layout.
pub fn dirichlet_dofs(mesh: &TetMesh) -> Vec<usize> {
    mesh.dirichlet_nodes()
        .iter()
        .flat_map(|&z| [3 * z, 3 * z + 1, 3 * z + 2])
        .collect()
}

fn assemble_scalar(mesh: &TetMesh, block: impl Fn(&ElementGeometry, usize, usize) -> f64) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut t = TripletBuilder::with_capacity(n, n, 16 * mesh.num_tets());
    for (tet, geo) in mesh.tets().iter().zip(mesh.geometries()) {
        for a in 0..4 {
            for b in 0..4 {
                t.add(tet[a], tet[b], block(geo, a, b));
            }
        }
    }
    t.build()
}

/// Diagonal vertex-rule mass, one entry per node.
pub fn assemble_lumped_mass(mesh: &TetMesh) -> CsrMatrix {
    CsrMatrix::from_diagonal(mesh.node_weights())
}

/// Exact P1 mass matrix; element block `|K|/20·(1 + δ_ab)`.
pub fn assemble_consistent_mass(mesh: &TetMesh) -> CsrMatrix {
    assemble_scalar(mesh, |g, a, b| g.volume / 20.0 * if a == b { 2.0 } else { 1.0 })
}

/// Scalar Laplace stiffness `|K| ∇λ_a·∇λ_b`.
pub fn assemble_stiffness(mesh: &TetMesh) -> CsrMatrix {
    assemble_scalar(mesh, |g, a, b| g.volume * g.gradients[a].dot(&g.gradients[b]))
}

/// Isotropic linear elasticity `∫ 2μ ε(u):ε(ψ) + λ div u div ψ` on the
/// interleaved vector space. No boundary conditions are applied.
pub fn assemble_elastic_stiffness(mesh: &TetMesh, mu: f64, lambda: f64) -> CsrMatrix {
    let n = 3 * mesh.num_nodes();
    let blocks: Vec<[f64; 144]> = mesh
        .geometries()
        .par_iter()
        .map(|geo| {
            let mut blk = [0.0; 144];
            let g = &geo.gradients;
            for a in 0..4 {
                for b in 0..4 {
                    let gab = g[a].dot(&g[b]);
                    for i in 0..3 {
                        for j in 0..3 {
                            let diag = if i == j { gab } else { 0.0 };
                            blk[(3 * a + i) * 12 + 3 * b + j] =
                                geo.volume * (mu * (diag + g[a][j] * g[b][i]) + lambda * g[a][i] * g[b][j]);
                        }
                    }
                }
            }
            blk
        })
        .collect();
    let mut t = TripletBuilder::with_capacity(n, n, 144 * mesh.num_tets());
    for (tet, blk) in mesh.tets().iter().zip(&blocks) {
        for r in 0..12 {
            for c in 0..12 {
                t.add(3 * tet[r / 3] + r % 3, 3 * tet[c / 3] + c % 3, blk[r * 12 + c]);
            }
        }
    }
    t.build()
}

/// Applies a scalar form componentwise: `(A ⊗ I₃) x`.
pub fn apply_scalar(a: &CsrMatrix, x: &NodalVectorField) -> NodalVectorField {
    let mut out = NodalVectorField::zeros(a.nrows());
    for r in 0..a.nrows() {
        let mut acc = Vec3::zeros();
        for (c, v) in a.row(r) {
            acc += x.get(c) * v;
        }
        out.set(r, acc);
    }
    out
}

/// `Σ_c x_cᵀ A y_c` for a scalar form `A`.
pub fn scalar_form(a: &CsrMatrix, x: &NodalVectorField, y: &NodalVectorField) -> f64 {
    let mut acc = 0.0;
    for r in 0..a.nrows() {
        let mut row = Vec3::zeros();
        for (c, v) in a.row(r) {
            row += y.get(c) * v;
        }
        acc += x.get(r).dot(&row);
    }
    acc
}

/// `½ Σ_c x_cᵀ A x_c` for a form with zero row sums, written as
/// `−¼ Σ_{z≠w} A_zw |x(z) − x(w)|²` so nearly constant fields do not lose
/// their energy to cancellation.
pub fn dirichlet_energy(a: &CsrMatrix, x: &NodalVectorField) -> f64 {
    let mut acc = 0.0;
    for r in 0..a.nrows() {
        let xr = x.get(r);
        for (c, v) in a.row(r) {
            if c != r {
                acc -= v * (xr - x.get(c)).norm_squared();
            }
        }
    }
    0.25 * acc
}

/// Vertex-rule inner product `Σ_z w_z x(z)·y(z)`.
pub fn lumped_dot(weights: &[f64], x: &NodalVectorField, y: &NodalVectorField) -> f64 {
    weights
        .iter()
        .zip(x.iter().zip(y.iter()))
        .map(|(w, (a, b))| w * a.dot(&b))
        .sum()
}

/// Nodal interpolant of a pointwise function.
pub fn interpolate(mesh: &TetMesh, f: impl Fn(&Vec3) -> Vec3) -> NodalVectorField {
    NodalVectorField::from_fn(mesh.num_nodes(), |z| f(&mesh.nodes()[z]))
}

/// Gradient of a P1 field on one element; row `c` is `∇x_c`.
pub fn element_gradient(geo: &ElementGeometry, tet: &[usize; 4], x: &NodalVectorField) -> Mat3 {
    let mut g = Mat3::zeros();
    for a in 0..4 {
        g += x.get(tet[a]) * geo.gradients[a].transpose();
    }
    g
}

/// Symmetric gradient `ε(u)` on one element.
pub fn element_strain(geo: &ElementGeometry, tet: &[usize; 4], u: &NodalVectorField) -> Mat3 {
    let g = element_gradient(geo, tet, u);
    (g + g.transpose()) * 0.5
}

/// Nodal strains by volume-weighted averaging over incident elements.
pub fn nodal_strains(mesh: &TetMesh, u: &NodalVectorField) -> Vec<Mat3> {
    let mut acc = vec![Mat3::zeros(); mesh.num_nodes()];
    let mut vol = vec![0.0; mesh.num_nodes()];
    for (tet, geo) in mesh.tets().iter().zip(mesh.geometries()) {
        let e = element_strain(geo, tet, u) * geo.volume;
        for &z in tet {
            acc[z] += e;
            vol[z] += geo.volume;
        }
    }
    acc.iter().zip(&vol).map(|(e, v)| e / *v).collect()
}

/// Load vector `⟨C:I_h[ε_m(m)], ε(ψ)⟩` in the interleaved layout. The
/// magnetostress is interpolated nodally, so on each element it integrates
/// to `|K|` times its vertex mean against the constant `ε(ψ)`.
pub fn magnetostrain_load(mesh: &TetMesh, m: &NodalVectorField, material: &MaterialParams) -> Vec<f64> {
    let nodal: Vec<Mat3> = m.iter().map(|mz| material.magnetostress(&mz)).collect();
    let mut out = vec![0.0; 3 * mesh.num_nodes()];
    for (tet, geo) in mesh.tets().iter().zip(mesh.geometries()) {
        let mean = (nodal[tet[0]] + nodal[tet[1]] + nodal[tet[2]] + nodal[tet[3]]) * (0.25 * geo.volume);
        for a in 0..4 {
            let f = mean * geo.gradients[a];
            for c in 0..3 {
                out[3 * tet[a] + c] += f[c];
            }
        }
    }
    out
}

/// The mesh-level forms shared by both time steppers and the diagnostics.
#[derive(Debug, Clone)]
pub struct Forms {
    pub consistent_mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub elastic: CsrMatrix,
    pub weights: Vec<f64>,
    elements: Vec<([usize; 4], ElementGeometry)>,
}

impl Forms {
    pub fn new(mesh: &TetMesh, mu: f64, lambda: f64) -> Self {
        Forms {
            consistent_mass: assemble_consistent_mass(mesh),
            stiffness: assemble_stiffness(mesh),
            elastic: assemble_elastic_stiffness(mesh, mu, lambda),
            weights: mesh.node_weights().to_vec(),
            elements: mesh.tets().iter().copied().zip(mesh.geometries().iter().copied()).collect(),
        }
    }

    /// `‖∇x‖²`, summed element by element so that fields with vanishing
    /// gradient give zero up to the square of the roundoff.
    fn gradient_sq(&self, x: &NodalVectorField) -> f64 {
        self.elements
            .iter()
            .map(|(tet, geo)| geo.volume * element_gradient(geo, tet, x).norm_squared())
            .sum()
    }

    pub fn h1_seminorm(&self, x: &NodalVectorField) -> f64 {
        self.gradient_sq(x).sqrt()
    }

    /// L² norm with the exact mass.
    pub fn l2_norm(&self, x: &NodalVectorField) -> f64 {
        scalar_form(&self.consistent_mass, x, x).max(0.0).sqrt()
    }

    /// `√(‖∇x‖² + ‖x‖²)`.
    pub fn h1_norm(&self, x: &NodalVectorField) -> f64 {
        (self.gradient_sq(x) + scalar_form(&self.consistent_mass, x, x).max(0.0)).sqrt()
    }

    pub fn h1_error(&self, a: &NodalVectorField, b: &NodalVectorField) -> f64 {
        self.h1_norm(&NodalVectorField::lin_comb(1.0, a, -1.0, b))
    }

    pub fn lumped_dot(&self, x: &NodalVectorField, y: &NodalVectorField) -> f64 {
        lumped_dot(&self.weights, x, y)
    }
}
