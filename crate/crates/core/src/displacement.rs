//! Two-step Newmark-β solver for the displacement.
//!
//! With `F_σ(u, m) = A u − F_m(m)` the elastic force, the loop step solves
//!
//! ```text
//! (M + βk²A) u^{i+1} = M(2uⁱ − u^{i−1})
//!     + k²[−(½ + γ − 2β) F_σ(uⁱ, Π mⁱ) − (½ − γ + β) F_σ(u^{i−1}, Π m^{i−1}) + β F_m(Π m^{i+1})]
//! ```
//!
//! and the first step uses the velocity `u̇⁰` in place of `u^{−1}`. The
//! velocity is never stored afterwards. Both systems are solved for a
//! correction to the explicit predictor `2uⁱ − u^{i−1}`, which keeps the
//! algebraic error relative to the step increment instead of to `uⁱ`.

use crate::fem::{dirichlet_dofs, magnetostrain_load, Forms, NodalVectorField};
use crate::magnetization::nodal_project;
use crate::material::MaterialParams;
use crate::mesh::TetMesh;
use crate::sparse::{apply_dirichlet, cg_solve, CsrMatrix, SolverReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewmarkParams {
    pub beta: f64,
    pub gamma: f64,
}

impl NewmarkParams {
    /// Largest admissible `β` and `γ`; `β = 1, γ = 3/2` is the pair of the
    /// first-order baseline.
    pub const BETA_MAX: f64 = 1.0;
    pub const GAMMA_MAX: f64 = 1.5;

    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        let p = NewmarkParams { beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && (0.0..=Self::BETA_MAX).contains(&self.beta)) {
            return Err(Error::invalid("beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && (0.0..=Self::GAMMA_MAX).contains(&self.gamma)) {
            return Err(Error::invalid("gamma", format!("must lie in [0, 1.5], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Human-readable cautions about conditional stability or order loss.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.beta <= 0.25 {
            w.push(format!("beta = {} <= 1/4: stability needs a CFL condition", self.beta));
        }
        if self.gamma != 0.5 {
            w.push(format!("gamma = {} != 1/2: first order with numerical damping", self.gamma));
        }
        w
    }

    /// Weight of `F_σ(uⁱ)` in the loop right-hand side.
    pub fn c_curr(&self) -> f64 {
        0.5 + self.gamma - 2.0 * self.beta
    }

    /// Weight of `F_σ(u^{i−1})` in the loop right-hand side.
    pub fn c_prev(&self) -> f64 {
        0.5 - self.gamma + self.beta
    }
}

/// Assembled Newmark system for a fixed mesh, material, `k` and `(β, γ)`.
#[derive(Debug, Clone)]
pub struct NewmarkSolver<'m> {
    mesh: &'m TetMesh,
    material: MaterialParams,
    params: NewmarkParams,
    k: f64,
    mass: CsrMatrix,
    elastic: CsrMatrix,
    system: CsrMatrix,
    dirichlet: Vec<usize>,
    pub tol: f64,
    /// `None` means ten times the number of unknowns.
    pub max_iter: Option<usize>,
}

impl<'m> NewmarkSolver<'m> {
    pub fn new(
        mesh: &'m TetMesh,
        forms: &Forms,
        material: &MaterialParams,
        params: NewmarkParams,
        k: f64,
        tol: f64,
    ) -> Self {
        let mass = forms.consistent_mass.kron_identity3();
        let elastic = forms.elastic.clone();
        let dirichlet = dirichlet_dofs(mesh);
        let raw = mass.add_scaled(1.0, &elastic, params.beta * k * k);
        let zeros = vec![0.0; raw.nrows()];
        let (system, _) = apply_dirichlet(&raw, &zeros, &dirichlet);
        NewmarkSolver {
            mesh,
            material: *material,
            params,
            k,
            mass,
            elastic,
            system,
            dirichlet,
            tol,
            max_iter: None,
        }
    }

    pub fn params(&self) -> NewmarkParams {
        self.params
    }

    /// `M + βk²A` after Dirichlet elimination.
    pub fn system_matrix(&self) -> &CsrMatrix {
        &self.system
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn elastic(&self) -> &CsrMatrix {
        &self.elastic
    }

    /// `F_m(m)`, or zeros without magnetostriction.
    pub fn magnetic_load(&self, m: &NodalVectorField) -> Vec<f64> {
        if self.material.lambda100 == 0.0 {
            vec![0.0; 3 * self.mesh.num_nodes()]
        } else {
            magnetostrain_load(self.mesh, m, &self.material)
        }
    }

    fn solve_correction(
        &self,
        predictor: NodalVectorField,
        mut residual: Vec<f64>,
    ) -> Result<(NodalVectorField, SolverReport)> {
        for &d in &self.dirichlet {
            residual[d] = 0.0;
        }
        let max_iter = self.max_iter.unwrap_or(10 * residual.len());
        let (delta, report) = cg_solve(&self.system, &residual, self.tol, max_iter)?;
        let report = report.require_converged("cg")?;
        let mut u = predictor;
        for (u, d) in u.as_mut_slice().iter_mut().zip(&delta) {
            *u += d;
        }
        Ok((u, report))
    }

    /// First step from `(u⁰, u̇⁰, m⁰)` and the new magnetization `m¹`.
    /// `m⁰` enters without projection.
    pub fn init(
        &self,
        u0: &NodalVectorField,
        udot0: &NodalVectorField,
        m0: &NodalVectorField,
        m1: &NodalVectorField,
    ) -> Result<(NodalVectorField, SolverReport)> {
        let NewmarkParams { beta, .. } = self.params;
        let k2 = self.k * self.k;
        let free = NodalVectorField::lin_comb(1.0, u0, self.k, udot0);
        let mut predictor = free.clone();
        predictor.zero_nodes(self.mesh.dirichlet_nodes());

        let jump = NodalVectorField::lin_comb(1.0, &free, -1.0, &predictor);
        let m_jump = self.mass.mul_vec(jump.as_slice());
        let a_u0 = self.elastic.mul_vec(u0.as_slice());
        let a_pred = self.elastic.mul_vec(predictor.as_slice());
        let fm0 = self.magnetic_load(m0);
        let fm1 = self.magnetic_load(&nodal_project(m1)?);
        let c0 = 0.5 - beta;
        let residual = (0..a_u0.len())
            .map(|i| m_jump[i] + k2 * (-c0 * (a_u0[i] - fm0[i]) + beta * fm1[i] - beta * a_pred[i]))
            .collect();
        self.solve_correction(predictor, residual)
    }

    /// Loop step producing `u^{i+1}`.
    pub fn step(
        &self,
        u_curr: &NodalVectorField,
        u_prev: &NodalVectorField,
        m_next: &NodalVectorField,
        m_curr: &NodalVectorField,
        m_prev: &NodalVectorField,
    ) -> Result<(NodalVectorField, SolverReport)> {
        let NewmarkParams { beta, gamma } = self.params;
        let (c1, c2) = (self.params.c_curr(), self.params.c_prev());
        let k2 = self.k * self.k;
        let predictor = NodalVectorField::lin_comb(2.0, u_curr, -1.0, u_prev);
        // −c1 A uⁱ − c2 A u^{i−1} − βA(2uⁱ − u^{i−1}) collapses to:
        let mix = NodalVectorField::lin_comb(0.5 + gamma, u_curr, 0.5 - gamma, u_prev);
        let a_mix = self.elastic.mul_vec(mix.as_slice());
        let residual = if self.material.lambda100 == 0.0 {
            a_mix.iter().map(|a| -k2 * a).collect()
        } else {
            let f_next = self.magnetic_load(&nodal_project(m_next)?);
            let f_curr = self.magnetic_load(&nodal_project(m_curr)?);
            let f_prev = self.magnetic_load(&nodal_project(m_prev)?);
            (0..a_mix.len())
                .map(|i| k2 * (-a_mix[i] + c1 * f_curr[i] + c2 * f_prev[i] + beta * f_next[i]))
                .collect()
        };
        self.solve_correction(predictor, residual)
    }

    /// `‖d_t uⁱ‖²_M + βk²‖d_t uⁱ‖²_A + ⟨A uⁱ, u^{i−1}⟩`, conserved by the
    /// loop for `γ = ½` without magnetostriction.
    pub fn conserved_quantity(&self, u_curr: &NodalVectorField, u_prev: &NodalVectorField) -> f64 {
        self.weighted_quantity(u_curr, u_prev, self.params.beta)
    }

    /// Variant of [`Self::conserved_quantity`] with the weight
    /// `β − (γ − ½)/2` on `‖d_t uⁱ‖²_A`, which is nonincreasing for `γ ≥ ½`.
    pub fn damped_quantity(&self, u_curr: &NodalVectorField, u_prev: &NodalVectorField) -> f64 {
        let NewmarkParams { beta, gamma } = self.params;
        self.weighted_quantity(u_curr, u_prev, beta - 0.5 * (gamma - 0.5))
    }

    fn weighted_quantity(&self, u_curr: &NodalVectorField, u_prev: &NodalVectorField, weight: f64) -> f64 {
        let d = NodalVectorField::lin_comb(1.0 / self.k, u_curr, -1.0 / self.k, u_prev);
        let (d, uc, up) = (d.as_slice(), u_curr.as_slice(), u_prev.as_slice());
        self.mass.bilinear(d, d) + weight * self.k * self.k * self.elastic.bilinear(d, d) + self.elastic.bilinear(uc, up)
    }
}
