//! The full time loop: one tangent-plane magnetization step followed by one
//! Newmark displacement step, with energy and constraint diagnostics.

use serde::{Deserialize, Serialize};

use crate::displacement::{NewmarkParams, NewmarkSolver};
use crate::fem::{interpolate, magnetostrain_load, scalar_form, Forms, NodalVectorField};
use crate::magnetization::{
    nodal_project, orthogonality_residual, solve_first_order_tps, solve_midpoint_velocity, update_magnetization,
    EnergyBalance, MidpointInputs, TangentPlaneParams, TangentPlaneSolver, VelocityStep,
};
use crate::material::MaterialParams;
use crate::mesh::TetMesh;
use crate::sparse::SolverReport;
use crate::{Error, Result, Vec3};

/// Tolerance on `|m⁰(z)| = 1` accepted by [`Simulation::run`].
pub const UNIT_TOL: f64 = 1e-10;
/// Growth factor of `|E|` over its initial magnitude that counts as blow-up.
pub const BLOWUP_FACTOR: f64 = 1e6;
/// Lower bound on the reference magnitude in the blow-up test.
const BLOWUP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Extrapolated midpoint rule for `m`, Newmark-β for `u`.
    MidpointNewmark,
    /// First-order tangent-plane step for `m`, Newmark with `β = 1, γ = 3/2`.
    Nr2025,
    /// Midpoint rule without the precession term; used to relax to an
    /// equilibrium.
    Minimization,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::MidpointNewmark => "midpoint-newmark",
            SchemeKind::Nr2025 => "nr2025",
            SchemeKind::Minimization => "minimization",
        }
    }

    /// Implicit weight of the exchange term.
    pub fn theta(self) -> f64 {
        match self {
            SchemeKind::Nr2025 => 1.0,
            _ => 0.5,
        }
    }

    pub fn precession(self) -> bool {
        self != SchemeKind::Minimization
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub kind: SchemeKind,
    /// Time step.
    pub k: f64,
    pub newmark: NewmarkParams,
    /// Relative residual tolerance of both linear solvers.
    pub solver_tol: f64,
    /// Record every `stride`-th step; `None` picks 1 for `T ≤ 1` and 10
    /// otherwise.
    pub stride: Option<usize>,
}

impl SchemeParams {
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn midpoint_newmark(k: f64) -> Self {
        SchemeParams {
            kind: SchemeKind::MidpointNewmark,
            k,
            newmark: NewmarkParams {
                beta: 1.0 / 3.0,
                gamma: 0.5,
            },
            solver_tol: Self::DEFAULT_TOL,
            stride: None,
        }
    }

    pub fn nr2025(k: f64) -> Self {
        SchemeParams {
            kind: SchemeKind::Nr2025,
            newmark: NewmarkParams { beta: 1.0, gamma: 1.5 },
            ..Self::midpoint_newmark(k)
        }
    }

    /// Relaxation preset; pair it with `α = 1`.
    pub fn minimization(k: f64) -> Self {
        SchemeParams {
            kind: SchemeKind::Minimization,
            newmark: NewmarkParams { beta: 0.5, gamma: 1.0 },
            ..Self::midpoint_newmark(k)
        }
    }

    pub fn preset(kind: SchemeKind, k: f64) -> Self {
        match kind {
            SchemeKind::MidpointNewmark => Self::midpoint_newmark(k),
            SchemeKind::Nr2025 => Self::nr2025(k),
            SchemeKind::Minimization => Self::minimization(k),
        }
    }

    pub fn with_newmark(mut self, beta: f64, gamma: f64) -> Self {
        self.newmark = NewmarkParams { beta, gamma };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::invalid("k", format!("must be positive, got {}", self.k)));
        }
        if !(self.solver_tol.is_finite() && self.solver_tol > 0.0) {
            return Err(Error::invalid("solver_tol", format!("must be positive, got {}", self.solver_tol)));
        }
        if self.stride == Some(0) {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        self.newmark.validate()?;
        if self.kind != SchemeKind::Nr2025 && (self.newmark.beta > 0.5 || self.newmark.gamma > 1.0) {
            return Err(Error::invalid(
                "beta",
                format!(
                    "beta <= 1/2 and gamma <= 1 required outside the nr2025 preset, got ({}, {})",
                    self.newmark.beta, self.newmark.gamma
                ),
            ));
        }
        Ok(())
    }

    pub fn effective_stride(&self, t_final: f64) -> usize {
        self.stride.unwrap_or(if t_final <= 1.0 { 1 } else { 10 })
    }
}

/// Initial magnetization, displacement and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub m0: NodalVectorField,
    pub u0: NodalVectorField,
    pub udot0: NodalVectorField,
}

impl InitialData {
    /// Constant magnetization `m` (normalized), zero displacement and
    /// velocity.
    pub fn uniform(mesh: &TetMesh, m: Vec3) -> Self {
        let n = mesh.num_nodes();
        InitialData {
            m0: NodalVectorField::constant(n, m.normalize()),
            u0: NodalVectorField::zeros(n),
            udot0: NodalVectorField::zeros(n),
        }
    }

    /// `5/√26 (0.2, sin 4(x+y+z), cos 4(x+y+z))`, which has unit length.
    pub fn helical(mesh: &TetMesh) -> Self {
        let s = 5.0 / 26f64.sqrt();
        let m0 = interpolate(mesh, |p| {
            let a = 4.0 * (p.x + p.y + p.z);
            Vec3::new(0.2, a.sin(), a.cos()) * s
        });
        InitialData {
            m0,
            ..Self::uniform(mesh, Vec3::x())
        }
    }

    /// Uniform `(0.9, 0.2, 0)/|(0.9, 0.2, 0)|` with the stretch
    /// `u⁰ = (10⁻³ x, 0, 0)`.
    pub fn tilted(mesh: &TetMesh) -> Self {
        Self::uniform(mesh, Vec3::new(0.9, 0.2, 0.0)).with_stretch(mesh, 1e-3)
    }

    /// Replaces `u⁰` by `(s x, 0, 0)`.
    pub fn with_stretch(mut self, mesh: &TetMesh, s: f64) -> Self {
        self.u0 = interpolate(mesh, |p| Vec3::new(s * p.x, 0.0, 0.0));
        self
    }

    pub fn validate(&self, mesh: &TetMesh) -> Result<()> {
        let n = mesh.num_nodes();
        for (name, f) in [("m0", &self.m0), ("u0", &self.u0), ("udot0", &self.udot0)] {
            if f.num_nodes() != n {
                return Err(Error::invalid("initial data", format!("{name} has {} nodes, mesh has {n}", f.num_nodes())));
            }
            if !f.is_finite() {
                return Err(Error::invalid("initial data", format!("{name} is not finite")));
            }
        }
        if let Some((z, m)) = self.m0.iter().enumerate().find(|(_, m)| (m.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::invalid(
                "initial data",
                format!("m0 must have unit length at every node, |m0({z})| = {}", m.norm()),
            ));
        }
        Ok(())
    }
}

/// Two consecutive iterates of both fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub m_prev: NodalVectorField,
    pub m_curr: NodalVectorField,
    pub u_prev: NodalVectorField,
    pub u_curr: NodalVectorField,
    /// Only meaningful while `step == 0`.
    pub udot0: NodalVectorField,
    pub step: usize,
    pub time: f64,
}

impl SimulationState {
    pub fn initial(init: &InitialData) -> Self {
        SimulationState {
            m_prev: init.m0.clone(),
            m_curr: init.m0.clone(),
            u_prev: init.u0.clone(),
            u_curr: init.u0.clone(),
            udot0: init.udot0.clone(),
            step: 0,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyComponents {
    pub exchange: f64,
    pub zeeman: f64,
    pub elastic: f64,
    pub kinetic: f64,
}

impl EnergyComponents {
    pub fn total(&self) -> f64 {
        self.exchange + self.zeeman + self.elastic + self.kinetic
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub total_energy: f64,
    pub exchange_energy: f64,
    pub zeeman_energy: f64,
    pub elastic_energy: f64,
    pub kinetic_energy: f64,
    pub mag_avg: Vec3,
    pub disp_avg: Vec3,
    pub err_l1_unit: f64,
    pub err_linf_unit: f64,
    pub mag_iterations: usize,
    pub disp_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    SolverDivergence,
    DegenerateExtrapolation,
    NonFinite,
    BlowUp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed {
        /// Step whose computation failed.
        step: usize,
        kind: FailureKind,
        message: String,
    },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub status: RunStatus,
    /// State after the last accepted step.
    pub final_state: SimulationState,
    /// Maxima over every accepted step, recorded or not.
    pub max_err_l1_unit: f64,
    pub max_err_linf_unit: f64,
    pub max_orthogonality: f64,
    pub max_energy_residual: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// What an observer sees after each accepted step.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub state: &'a SimulationState,
    pub velocity: &'a VelocityStep,
    pub balance: EnergyBalance,
    pub orthogonality: f64,
    pub mag_report: SolverReport,
    pub disp_report: SolverReport,
    pub energy: EnergyComponents,
}

/// `(Σ_z w_z ||m(z)|² − 1|, max_z |m(z)| − 1)`.
pub fn unit_length_metrics(m: &NodalVectorField, weights: &[f64]) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut linf = f64::NEG_INFINITY;
    for (v, w) in m.iter().zip(weights) {
        l1 += w * (v.norm_squared() - 1.0).abs();
        linf = linf.max(v.norm() - 1.0);
    }
    (l1, linf)
}

/// Volume average with the vertex rule.
pub fn averages(field: &NodalVectorField, weights: &[f64]) -> Vec3 {
    let vol: f64 = weights.iter().sum();
    field.iter().zip(weights).fold(Vec3::zeros(), |acc, (v, w)| acc + v * *w) / vol
}

/// Blow-up test against the initial energy.
pub fn detect_blowup(energy: f64, initial_energy: f64) -> bool {
    !energy.is_finite() || energy.abs() > BLOWUP_FACTOR * initial_energy.abs().max(BLOWUP_FLOOR)
}

fn classify(e: &Error) -> FailureKind {
    match e {
        Error::DegenerateExtrapolation { .. } | Error::ZeroProjection { .. } => FailureKind::DegenerateExtrapolation,
        Error::Solver(crate::sparse::SolverError::Breakdown { .. }) => FailureKind::NonFinite,
        _ => FailureKind::SolverDivergence,
    }
}

/// A mesh, material and scheme with everything assembled once.
pub struct Simulation<'m> {
    mesh: &'m TetMesh,
    material: MaterialParams,
    scheme: SchemeParams,
    forms: Forms,
    tps: TangentPlaneSolver,
    newmark: NewmarkSolver<'m>,
}

impl<'m> Simulation<'m> {
    pub fn new(mesh: &'m TetMesh, material: &MaterialParams, scheme: &SchemeParams) -> Result<Self> {
        material.validate()?;
        scheme.validate()?;
        for w in scheme.newmark.warnings() {
            log::debug!("{w}");
        }
        let forms = Forms::new(mesh, material.mu, material.lambda);
        let tps = TangentPlaneSolver::new(forms.stiffness.clone(), forms.weights.clone(), scheme.solver_tol);
        let newmark = NewmarkSolver::new(mesh, &forms, material, scheme.newmark, scheme.k, scheme.solver_tol);
        Ok(Simulation {
            mesh,
            material: *material,
            scheme: *scheme,
            forms,
            tps,
            newmark,
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        self.mesh
    }

    pub fn forms(&self) -> &Forms {
        &self.forms
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn scheme(&self) -> &SchemeParams {
        &self.scheme
    }

    pub fn tangent_plane_solver(&self) -> &TangentPlaneSolver {
        &self.tps
    }

    pub fn newmark_solver(&self) -> &NewmarkSolver<'m> {
        &self.newmark
    }

    /// Energy of `state` with the field `f(t)` at the state's time.
    pub fn total_energy(&self, state: &SimulationState) -> Result<EnergyComponents> {
        let m = &state.m_curr;
        let u = &state.u_curr;
        let w = &self.forms.weights;
        let f = self.material.zeeman.at(state.time);
        let exchange = 0.5 * scalar_form(&self.forms.stiffness, m, m);
        let zeeman = -m.iter().zip(w).map(|(mz, wz)| wz * f.dot(&mz)).sum::<f64>();
        let us = u.as_slice();
        let mut elastic = 0.5 * self.forms.elastic.bilinear(us, us);
        if self.material.lambda100 != 0.0 {
            let pm = nodal_project(m)?;
            let fm = magnetostrain_load(self.mesh, &pm, &self.material);
            elastic -= fm.iter().zip(us).map(|(a, b)| a * b).sum::<f64>();
            elastic += 0.5
                * pm.iter()
                    .zip(w)
                    .map(|(mz, wz)| {
                        let e = self.material.magnetostrain(&mz);
                        wz * self.material.hooke(&e).dot(&e)
                    })
                    .sum::<f64>();
        }
        let velocity = if state.step == 0 {
            state.udot0.clone()
        } else {
            NodalVectorField::lin_comb(1.0 / self.scheme.k, &state.u_curr, -1.0 / self.scheme.k, &state.u_prev)
        };
        let kinetic = 0.5 * scalar_form(&self.forms.consistent_mass, &velocity, &velocity);
        Ok(EnergyComponents {
            exchange,
            zeeman,
            elastic,
            kinetic,
        })
    }

    fn record(&self, state: &SimulationState, energy: EnergyComponents, mag_it: usize, disp_it: usize) -> DiagnosticsRecord {
        let w = &self.forms.weights;
        let (l1, linf) = unit_length_metrics(&state.m_curr, w);
        DiagnosticsRecord {
            step: state.step,
            t: state.time,
            total_energy: energy.total(),
            exchange_energy: energy.exchange,
            zeeman_energy: energy.zeeman,
            elastic_energy: energy.elastic,
            kinetic_energy: energy.kinetic,
            mag_avg: averages(&state.m_curr, w),
            disp_avg: averages(&state.u_curr, w),
            err_l1_unit: l1,
            err_linf_unit: linf,
            mag_iterations: mag_it,
            disp_iterations: disp_it,
        }
    }

    fn magnetization_step(&self, state: &SimulationState) -> Result<VelocityStep> {
        let k = self.scheme.k;
        let kind = self.scheme.kind;
        match kind {
            SchemeKind::Nr2025 => {
                solve_first_order_tps(&self.tps, self.mesh, &self.material, k, state.time, &state.m_curr, &state.u_curr)
            }
            _ => {
                let inputs = if state.step == 0 {
                    MidpointInputs::Init {
                        m0: &state.m_curr,
                        u0: &state.u_curr,
                    }
                } else {
                    MidpointInputs::Loop {
                        m_curr: &state.m_curr,
                        m_prev: &state.m_prev,
                        u_curr: &state.u_curr,
                        u_prev: &state.u_prev,
                    }
                };
                solve_midpoint_velocity(&self.tps, self.mesh, &self.material, k, state.time, inputs, kind.precession())
            }
        }
    }

    /// Advances `state` by one step. On error `state` is unchanged.
    pub fn step(&self, state: &mut SimulationState) -> Result<(VelocityStep, SolverReport)> {
        let k = self.scheme.k;
        let vel = self.magnetization_step(state)?;
        let m_next = update_magnetization(&state.m_curr, &vel.v, k);
        let (u_next, disp_report) = if state.step == 0 {
            self.newmark.init(&state.u_curr, &state.udot0, &state.m_curr, &m_next)?
        } else {
            self.newmark
                .step(&state.u_curr, &state.u_prev, &m_next, &state.m_curr, &state.m_prev)?
        };
        state.m_prev = std::mem::replace(&mut state.m_curr, m_next);
        state.u_prev = std::mem::replace(&mut state.u_curr, u_next);
        state.step += 1;
        state.time = state.step as f64 * k;
        Ok((vel, disp_report))
    }

    pub fn run(&self, init: &InitialData, t_final: f64) -> Result<RunOutcome> {
        self.run_with_observer(init, t_final, |_| {})
    }

    /// Runs to `t_final`, calling `observer` after every accepted step.
    /// Invalid input is an error; failures during the run end it early with
    /// [`RunStatus::Failed`].
    pub fn run_with_observer(
        &self,
        init: &InitialData,
        t_final: f64,
        mut observer: impl FnMut(&StepInfo<'_>),
    ) -> Result<RunOutcome> {
        init.validate(self.mesh)?;
        let k = self.scheme.k;
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::invalid("T", format!("must be positive, got {t_final}")));
        }
        let steps = (t_final / k).round() as usize;
        if steps == 0 || ((steps as f64) * k - t_final).abs() > 1e-9 * t_final {
            return Err(Error::invalid("k", format!("k = {k} must divide T = {t_final}")));
        }
        let stride = self.scheme.effective_stride(t_final);
        let theta = self.scheme.kind.theta();
        let tp_params = TangentPlaneParams {
            alpha: self.material.alpha,
            theta,
            precession: self.scheme.kind.precession(),
        };

        let mut state = SimulationState::initial(init);
        let e0 = self.total_energy(&state)?;
        let initial_energy = e0.total();
        let first = self.record(&state, e0, 0, 0);
        let mut outcome = RunOutcome {
            records: vec![first],
            status: RunStatus::Completed,
            final_state: state.clone(),
            max_err_l1_unit: first.err_l1_unit,
            max_err_linf_unit: first.err_linf_unit,
            max_orthogonality: 0.0,
            max_energy_residual: 0.0,
            initial_energy,
            final_energy: initial_energy,
        };

        for _ in 0..steps {
            let m_before = state.m_curr.clone();
            let failed_step = state.step + 1;
            let (vel, disp_report) = match self.step(&mut state) {
                Ok(r) => r,
                Err(e) => {
                    outcome.status = RunStatus::Failed {
                        step: failed_step,
                        kind: classify(&e),
                        message: e.to_string(),
                    };
                    break;
                }
            };
            let energy = match self.total_energy(&state) {
                Ok(e) => e,
                Err(e) => {
                    outcome.status = RunStatus::Failed {
                        step: failed_step,
                        kind: classify(&e),
                        message: e.to_string(),
                    };
                    break;
                }
            };
            let total = energy.total();
            if !state.m_curr.is_finite() || !state.u_curr.is_finite() || detect_blowup(total, initial_energy) {
                let kind = if total.is_finite() && state.m_curr.is_finite() && state.u_curr.is_finite() {
                    FailureKind::BlowUp
                } else {
                    FailureKind::NonFinite
                };
                outcome.status = RunStatus::Failed {
                    step: failed_step,
                    kind,
                    message: format!("energy {total:e} at t = {}", state.time),
                };
                break;
            }
            let balance = EnergyBalance::compute(&self.tps, &m_before, &state.m_curr, &vel, k, tp_params);
            let orthogonality = orthogonality_residual(&vel.v, &vel.anchor);
            let rec = self.record(&state, energy, vel.report.iterations, disp_report.iterations);
            outcome.max_err_l1_unit = outcome.max_err_l1_unit.max(rec.err_l1_unit);
            outcome.max_err_linf_unit = outcome.max_err_linf_unit.max(rec.err_linf_unit);
            outcome.max_orthogonality = outcome.max_orthogonality.max(orthogonality);
            outcome.max_energy_residual = outcome.max_energy_residual.max(balance.relative_residual());
            outcome.final_energy = total;
            if state.step % stride == 0 || state.step == steps {
                outcome.records.push(rec);
            }
            observer(&StepInfo {
                state: &state,
                velocity: &vel,
                balance,
                orthogonality,
                mag_report: vel.report,
                disp_report,
                energy,
            });
            outcome.final_state = state.clone();
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::fem::dirichlet_dofs;
    use crate::material::ZeemanField;
    use crate::sparse::{apply_dirichlet, cg_solve};

    fn unit_cube(n: usize) -> TetMesh {
        TetMesh::structured_cube(n, 1.0)
    }

    #[test]
    fn presets() {
        let p = SchemeParams::midpoint_newmark(1e-3);
        assert_eq!((p.newmark.beta, p.newmark.gamma), (1.0 / 3.0, 0.5));
        let p = SchemeParams::nr2025(1e-3);
        assert_eq!((p.newmark.beta, p.newmark.gamma), (1.0, 1.5));
        assert!(p.validate().is_ok());
        let p = SchemeParams::minimization(1e-3);
        assert_eq!((p.newmark.beta, p.newmark.gamma), (0.5, 1.0));
        assert!(!p.kind.precession());
        assert!(SchemeParams::midpoint_newmark(1e-3).with_newmark(1.0, 1.5).validate().is_err());
        assert!(SchemeParams::midpoint_newmark(-1.0).validate().is_err());
        assert_eq!(SchemeParams::midpoint_newmark(1e-3).effective_stride(1.0), 1);
        assert_eq!(SchemeParams::midpoint_newmark(1e-3).effective_stride(10.0), 10);
    }

    #[test]
    fn unit_length_metric_examples() {
        let mesh = unit_cube(2);
        let w = mesh.node_weights();
        let unit = InitialData::helical(&mesh).m0;
        let (l1, linf) = unit_length_metrics(&unit, w);
        assert!(l1 <= 1e-14 && linf.abs() <= 1e-15);
        let long = NodalVectorField::constant(mesh.num_nodes(), Vec3::new(1.1, 0.0, 0.0));
        let (l1, linf) = unit_length_metrics(&long, w);
        assert_relative_eq!(l1, 0.21, epsilon = 1e-13);
        assert_relative_eq!(linf, 0.1, epsilon = 1e-15);
        let (l1, linf) = unit_length_metrics(&nodal_project(&long).unwrap(), w);
        assert_eq!((l1, linf), (0.0, 0.0));
    }

    #[test]
    fn average_examples() {
        let mesh = unit_cube(3);
        let w = mesh.node_weights();
        let c = Vec3::new(1.0, -2.0, 0.5);
        assert_relative_eq!(averages(&NodalVectorField::constant(mesh.num_nodes(), c), w), c, epsilon = 1e-14);
        let x = interpolate(&mesh, |p| Vec3::new(p.x, 0.0, 0.0));
        assert_relative_eq!(averages(&x, w), Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-14);
        assert_eq!(averages(&NodalVectorField::zeros(mesh.num_nodes()), w), Vec3::zeros());
    }

    #[test]
    fn blowup_examples() {
        assert!(detect_blowup(f64::NAN, 1.0));
        assert!(detect_blowup(f64::INFINITY, 1.0));
        assert!(detect_blowup(2e6, 1.0));
        assert!(!detect_blowup(0.5, 1.0));
        assert!(!detect_blowup(-0.9, -1.0));
    }

    #[test]
    fn energy_examples() {
        let mesh = unit_cube(2);
        let material = MaterialParams::default();
        let sim = Simulation::new(&mesh, &material, &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let state = SimulationState::initial(&InitialData::uniform(&mesh, Vec3::x()));
        let e = sim.total_energy(&state).unwrap();
        let l = material.lambda100;
        assert_relative_eq!(e.total(), -1.0 + 1.5 * material.mu * l * l, epsilon = 1e-12);

        let zero_material = MaterialParams {
            zeeman: ZeemanField::zero(),
            lambda100: 0.0,
            ..material
        };
        let sim = Simulation::new(&mesh, &zero_material, &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let mut state = SimulationState::initial(&InitialData::uniform(&mesh, Vec3::x()));
        state.m_curr = NodalVectorField::zeros(mesh.num_nodes());
        assert_eq!(sim.total_energy(&state).unwrap().total(), 0.0);
    }

    #[test]
    fn helical_exchange_energy_approaches_analytic_value() {
        // ∇m has rows 0, 4c·cos(a)(1,1,1), −4c·sin(a)(1,1,1) with c = 5/√26,
        // so ½|∇m|² = ½·16c²·3 = 24c² pointwise.
        let c2 = 25.0 / 26.0;
        let exact = 24.0 * c2;
        let mut errs = Vec::new();
        for n in [4, 8] {
            let mesh = unit_cube(n);
            let sim = Simulation::new(&mesh, &MaterialParams::default(), &SchemeParams::midpoint_newmark(1e-2)).unwrap();
            let state = SimulationState::initial(&InitialData::helical(&mesh));
            let e = sim.total_energy(&state).unwrap();
            errs.push((e.exchange - exact).abs() / exact);
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[1] < 0.1, "{errs:?}");
    }

    #[test]
    fn equilibrium_is_stationary() {
        // Clamping makes the stress nonuniform, so the equilibrium magnetization
        // is not exactly uniform: relax it first, then pre-solve the static
        // elastic problem for the relaxed magnetization.
        let mesh = unit_cube(2);
        let material = MaterialParams::default();
        let relax_material = MaterialParams { alpha: 1.0, ..material };
        let relax = Simulation::new(&mesh, &relax_material, &SchemeParams::minimization(2e-2)).unwrap();
        let relaxed = relax.run(&InitialData::uniform(&mesh, Vec3::x()), 100.0).unwrap();
        assert!(relaxed.status.is_completed());
        let m = nodal_project(&relaxed.final_state.m_curr).unwrap();

        let forms = Forms::new(&mesh, material.mu, material.lambda);
        let f = magnetostrain_load(&mesh, &m, &material);
        let (a, b) = apply_dirichlet(&forms.elastic, &f, &dirichlet_dofs(&mesh));
        let (u, rep) = cg_solve(&a, &b, 1e-14, 10_000).unwrap();
        assert!(rep.converged);
        let init = InitialData {
            m0: m,
            u0: NodalVectorField::from_flat(u),
            udot0: NodalVectorField::zeros(mesh.num_nodes()),
        };
        let sim = Simulation::new(&mesh, &material, &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let out = sim.run(&init, 0.2).unwrap();
        assert!(out.status.is_completed());
        let dm = out.final_state.m_curr.max_abs_diff(&init.m0);
        let du = out.final_state.u_curr.max_abs_diff(&init.u0);
        assert!(dm <= 1e-8 && du <= 1e-8, "{dm:e} {du:e}");
    }

    #[test]
    fn decoupled_without_magnetostriction() {
        let mesh = unit_cube(2);
        let material = MaterialParams {
            lambda100: 0.0,
            ..MaterialParams::default()
        };
        let sim = Simulation::new(&mesh, &material, &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let a = InitialData::helical(&mesh);
        let mut b = a.clone().with_stretch(&mesh, 0.05);
        b.udot0 = interpolate(&mesh, |p| Vec3::new(0.0, p.x, 0.0));
        let ra = sim.run(&a, 0.1).unwrap();
        let rb = sim.run(&b, 0.1).unwrap();
        assert!(ra.final_state.m_curr.max_abs_diff(&rb.final_state.m_curr) <= 1e-9);
        assert!(ra.final_state.u_curr != rb.final_state.u_curr);
    }

    #[test]
    fn run_records_and_invariants() {
        let mesh = unit_cube(2);
        let sim = Simulation::new(&mesh, &MaterialParams::default(), &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let mut steps = 0;
        let out = sim
            .run_with_observer(&InitialData::helical(&mesh), 0.1, |info| {
                steps += 1;
                assert!(info.orthogonality <= 1e-10);
                assert!(info.balance.relative_residual() <= 1e-8);
            })
            .unwrap();
        assert_eq!(steps, 10);
        assert_eq!(out.records.len(), 11);
        assert!(out.records[0].err_l1_unit <= 1e-14);
        for r in &out.records {
            let sum = r.exchange_energy + r.zeeman_energy + r.elastic_energy + r.kinetic_energy;
            assert!((sum - r.total_energy).abs() <= 1e-12 * sum.abs().max(1.0));
        }
        assert!((out.final_state.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mesh = unit_cube(1);
        let sim = Simulation::new(&mesh, &MaterialParams::default(), &SchemeParams::midpoint_newmark(0.3)).unwrap();
        assert!(sim.run(&InitialData::uniform(&mesh, Vec3::x()), 1.0).is_err());
        let mut bad = InitialData::uniform(&mesh, Vec3::x());
        bad.m0 = bad.m0.scaled(2.0);
        let sim = Simulation::new(&mesh, &MaterialParams::default(), &SchemeParams::midpoint_newmark(0.1)).unwrap();
        assert!(sim.run(&bad, 1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let mesh = unit_cube(2);
        let sim = Simulation::new(&mesh, &MaterialParams::default(), &SchemeParams::midpoint_newmark(1e-2)).unwrap();
        let a = sim.run(&InitialData::helical(&mesh), 0.05).unwrap();
        let b = sim.run(&InitialData::helical(&mesh), 0.05).unwrap();
        assert_eq!(a.records, b.records);
    }
}
