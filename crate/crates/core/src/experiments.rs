//! Named experiments driven by TOML config files, with CSV output.
//!
//! Every experiment has a `compute` half that returns typed results and a
//! `write` half that turns them into CSV files with a fixed header. Numbers
//! are written with 17 significant digits so that doubles round-trip.
//!
//! ```
//! use magnetoelastic::experiments::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str(r#"
//! experiment = "single-run"
//!
//! [mesh]
//! n = 2
//!
//! [time]
//! k = [1e-2]
//! T = 0.05
//!
//! [scheme]
//! presets = ["midpoint-newmark"]
//!
//! [material]
//! alpha = 0.1
//! lambda100 = 3e-3
//! mu = 24.0
//! lambda = 7.5
//! zeeman = { kind = "constant", field = [1.0, 0.0, 0.0] }
//!
//! [initial]
//! preset = "helical"
//! "#).unwrap();
//! let run = magnetoelastic::experiments::single_run(&cfg).unwrap();
//! assert!(run.status.is_completed());
//! assert_eq!(run.records.len(), 6);
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fem::{Forms, NodalVectorField};
use crate::integrator::{
    DiagnosticsRecord, InitialData, RunOutcome, RunStatus, SchemeKind, SchemeParams, Simulation,
};
use crate::magnetization::nodal_project;
use crate::material::{MaterialParams, ZeemanField};
use crate::mesh::TetMesh;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ConvergenceTime,
    UnitLength,
    EnergyDissipation,
    Nutation,
    Stability,
    SingleRun,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ConvergenceTime,
        ExperimentKind::UnitLength,
        ExperimentKind::EnergyDissipation,
        ExperimentKind::Nutation,
        ExperimentKind::Stability,
        ExperimentKind::SingleRun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ConvergenceTime => "convergence-time",
            ExperimentKind::UnitLength => "unit-length",
            ExperimentKind::EnergyDissipation => "energy-dissipation",
            ExperimentKind::Nutation => "nutation",
            ExperimentKind::Stability => "stability",
            ExperimentKind::SingleRun => "single-run",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Subdivisions per edge of the cube.
    pub n: usize,
    #[serde(default = "unit")]
    pub side: f64,
    /// Mesh sweep for the stability grid; empty means `[n]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
}

impl MeshConfig {
    pub fn sizes(&self) -> Vec<usize> {
        if self.sizes.is_empty() {
            vec![self.n]
        } else {
            self.sizes.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// Time steps. The convergence study takes a single base step `k₀`.
    pub k: Vec<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Convergence study: runs `k₀ 2⁻ⁿ` for `n = 0..=levels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Convergence study: reference run at `k₀ 2^-reference_level`;
    /// defaults to `levels + 4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub presets: Vec<SchemeKind>,
    /// Overrides the preset's Newmark β.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Overrides the preset's Newmark γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// β sweep of the stability grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPreset {
    /// Constant `direction`.
    Uniform,
    /// `5/√26 (0.2, sin 4(x+y+z), cos 4(x+y+z))`.
    Helical,
    /// Constant `(0.9, 0.2, 0)`, normalized, with stretch `10⁻³`.
    Tilted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub preset: InitialPreset,
    /// Direction of the uniform preset; defaults to `(1, 0, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec3>,
    /// `u⁰ = (s x, 0, 0)`; overrides the preset's stretch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            preset: InitialPreset::Uniform,
            direction: None,
            stretch: None,
        }
    }
}

impl InitialConfig {
    pub fn build(&self, mesh: &TetMesh) -> InitialData {
        let init = match self.preset {
            InitialPreset::Uniform => InitialData::uniform(mesh, self.direction.unwrap_or_else(Vec3::x)),
            InitialPreset::Helical => InitialData::helical(mesh),
            InitialPreset::Tilted => InitialData::tilted(mesh),
        };
        match self.stretch {
            Some(s) => init.with_stretch(mesh, s),
            None => init,
        }
    }
}

/// Relaxation phase of the nutation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutationConfig {
    #[serde(default = "relax_k")]
    pub relax_k: f64,
    #[serde(default = "relax_t", rename = "relax_T")]
    pub relax_t_final: f64,
    #[serde(default = "unit")]
    pub relax_alpha: f64,
    /// Stretch of the relaxation's `u⁰`; defaults to `λ₁₀₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax_stretch: Option<f64>,
    /// Per-step energy change above which the relaxation counts as
    /// unconverged.
    #[serde(default = "relax_tol")]
    pub relax_energy_tol: f64,
}

impl Default for NutationConfig {
    fn default() -> Self {
        NutationConfig {
            relax_k: relax_k(),
            relax_t_final: relax_t(),
            relax_alpha: 1.0,
            relax_stretch: None,
            relax_energy_tol: relax_tol(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    SchemeParams::DEFAULT_TOL
}
fn relax_k() -> f64 {
    2e-2
}
fn relax_t() -> f64 {
    100.0
}
fn relax_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub scheme: SchemeConfig,
    pub material: MaterialParams,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nutation: Option<NutationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The scheme for `kind` at step `k` with the configured overrides.
    pub fn scheme_params(&self, kind: SchemeKind, k: f64) -> SchemeParams {
        let mut p = SchemeParams::preset(kind, k);
        if let Some(beta) = self.scheme.beta {
            p.newmark.beta = beta;
        }
        if let Some(gamma) = self.scheme.gamma {
            p.newmark.gamma = gamma;
        }
        p.solver_tol = self.scheme.solver_tol;
        p.stride = self.scheme.stride;
        p
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.scheme.betas.is_empty() {
            vec![0.0, 1.0 / 3.0]
        } else {
            self.scheme.betas.clone()
        }
    }

    /// Time steps of the convergence study, coarsest first, followed by the
    /// reference step.
    pub fn convergence_steps(&self) -> (Vec<f64>, f64) {
        let k0 = self.time.k[0];
        let levels = self.time.levels.unwrap_or(3);
        let reference = self.time.reference_level.unwrap_or(levels + 4);
        let ks = (0..=levels).map(|n| k0 * 0.5f64.powi(n as i32)).collect();
        (ks, k0 * 0.5f64.powi(reference as i32))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| Err(Error::Config(format!("{field}: {reason}")));
        if self.mesh.n == 0 || self.mesh.sizes.contains(&0) {
            return fail("mesh.n", "subdivisions must be at least 1".into());
        }
        if !(self.mesh.side.is_finite() && self.mesh.side > 0.0) {
            return fail("mesh.side", format!("must be positive, got {}", self.mesh.side));
        }
        let t = self.time.t_final;
        if !(t.is_finite() && t > 0.0) {
            return fail("time.T", format!("must be positive, got {t}"));
        }
        if self.time.k.is_empty() {
            return fail("time.k", "at least one step is required".into());
        }
        let mut ks = self.time.k.clone();
        if self.experiment == ExperimentKind::ConvergenceTime {
            if self.time.k.len() != 1 {
                return fail("time.k", "the convergence study takes exactly one base step".into());
            }
            let levels = self.time.levels.unwrap_or(3);
            if self.time.reference_level.is_some_and(|r| r < levels) {
                return fail("time.reference_level", format!("must be at least levels = {levels}"));
            }
            let (steps, reference) = self.convergence_steps();
            ks = steps;
            ks.push(reference);
        }
        for &k in &ks {
            if !(k.is_finite() && k > 0.0) {
                return fail("time.k", format!("must be positive, got {k}"));
            }
            let steps = (t / k).round();
            if steps < 1.0 || (steps * k - t).abs() > 1e-9 * t {
                return fail("time.k", format!("k = {k} must divide T = {t}"));
            }
        }
        if self.scheme.presets.is_empty() {
            return fail("scheme.presets", "at least one preset is required".into());
        }
        if !(self.scheme.solver_tol.is_finite() && self.scheme.solver_tol > 0.0) {
            return fail("scheme.solver_tol", format!("must be positive, got {}", self.scheme.solver_tol));
        }
        let field_error = |e: Error| match e {
            Error::InvalidParameter { field, reason } => Error::Config(format!("{field}: {reason}")),
            e => e,
        };
        for &kind in &self.scheme.presets {
            let mut p = self.scheme_params(kind, ks[0]);
            p.validate().map_err(field_error)?;
            if self.experiment == ExperimentKind::Stability {
                for beta in self.betas() {
                    p.newmark.beta = beta;
                    p.validate().map_err(field_error)?;
                }
            }
        }
        self.material.validate().map_err(field_error)?;
        if let Some(d) = self.initial.direction {
            if !(d.iter().all(|x| x.is_finite()) && d.norm() > 0.0) {
                return fail("initial.direction", "must be a finite nonzero vector".into());
            }
        }
        if self.initial.stretch.is_some_and(|s| !s.is_finite()) {
            return fail("initial.stretch", "must be finite".into());
        }
        if let Some(n) = &self.nutation {
            let steps = (n.relax_t_final / n.relax_k).round();
            if !(n.relax_k > 0.0 && n.relax_t_final > 0.0 && n.relax_alpha > 0.0)
                || (steps * n.relax_k - n.relax_t_final).abs() > 1e-9 * n.relax_t_final
            {
                return fail(
                    "nutation",
                    "relax_k, relax_T and relax_alpha must be positive and relax_k must divide relax_T".into(),
                );
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> TetMesh {
        TetMesh::structured_cube(self.mesh.n, self.mesh.side)
    }
}

/// `ln(e_i/e_{i+1}) / ln(k_i/k_{i+1})` for consecutive pairs.
pub fn observed_orders(ks: &[f64], errors: &[f64]) -> Vec<f64> {
    ks.windows(2)
        .zip(errors.windows(2))
        .map(|(k, e)| (e[0] / e[1]).ln() / (k[0] / k[1]).ln())
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn linear_fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn label(kind: SchemeKind, k: f64) -> String {
    format!("{}-k{k:e}", kind.name())
}

fn run_one(
    mesh: &TetMesh,
    material: &MaterialParams,
    scheme: &SchemeParams,
    init: &InitialData,
    t_final: f64,
) -> Result<RunOutcome> {
    Simulation::new(mesh, material, scheme)?.run(init, t_final)
}

fn require_completed(outcome: &RunOutcome, label: String) -> Result<()> {
    match &outcome.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Failed { step, message, .. } => Err(Error::RunFailed {
            label,
            reason: format!("step {step}: {message}"),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub k: f64,
    pub err_m_h1: f64,
    pub err_u_h1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub scheme: SchemeKind,
    pub k_ref: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Largest orthogonality residual over all runs, reference included.
    pub max_orthogonality: f64,
}

impl ConvergenceTable {
    pub fn orders_m(&self) -> Vec<f64> {
        let ks: Vec<f64> = self.rows.iter().map(|r| r.k).collect();
        observed_orders(&ks, &self.rows.iter().map(|r| r.err_m_h1).collect::<Vec<_>>())
    }

    pub fn orders_u(&self) -> Vec<f64> {
        let ks: Vec<f64> = self.rows.iter().map(|r| r.k).collect();
        observed_orders(&ks, &self.rows.iter().map(|r| r.err_u_h1).collect::<Vec<_>>())
    }
}

/// Self-convergence in time: H¹ errors at `T` against the reference run,
/// one table per preset.
pub fn convergence_time(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceTable>> {
    let mesh = cfg.mesh();
    let init = cfg.initial.build(&mesh);
    let forms = Forms::new(&mesh, cfg.material.mu, cfg.material.lambda);
    let (ks, k_ref) = cfg.convergence_steps();
    let t = cfg.time.t_final;
    cfg.scheme
        .presets
        .iter()
        .map(|&kind| {
            let all: Vec<f64> = ks.iter().copied().chain([k_ref]).collect();
            let finals = all
                .par_iter()
                .map(|&k| {
                    let out = run_one(&mesh, &cfg.material, &cfg.scheme_params(kind, k), &init, t)?;
                    require_completed(&out, label(kind, k))?;
                    Ok((out.final_state, out.max_orthogonality))
                })
                .collect::<Result<Vec<_>>>()?;
            let max_orthogonality = finals.iter().map(|f| f.1).fold(0.0, f64::max);
            let finals: Vec<_> = finals.into_iter().map(|f| f.0).collect();
            let reference = finals.last().expect("reference run");
            let rows = ks
                .iter()
                .zip(&finals)
                .map(|(&k, s)| ConvergenceRow {
                    k,
                    err_m_h1: forms.h1_error(&s.m_curr, &reference.m_curr),
                    err_u_h1: forms.h1_error(&s.u_curr, &reference.u_curr),
                })
                .collect();
            Ok(ConvergenceTable {
                scheme: kind,
                k_ref,
                rows,
                max_orthogonality,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitLengthRow {
    pub k: f64,
    /// Maxima over all time steps.
    pub err_l1: f64,
    pub err_linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitLengthTable {
    pub scheme: SchemeKind,
    pub rows: Vec<UnitLengthRow>,
    /// Largest orthogonality residual over all runs.
    pub max_orthogonality: f64,
}

impl UnitLengthTable {
    pub fn orders_l1(&self) -> Vec<f64> {
        let ks: Vec<f64> = self.rows.iter().map(|r| r.k).collect();
        observed_orders(&ks, &self.rows.iter().map(|r| r.err_l1).collect::<Vec<_>>())
    }
}

/// Unit-length violation maximized over time, per preset and step.
pub fn unit_length(cfg: &ExperimentConfig) -> Result<Vec<UnitLengthTable>> {
    let mesh = cfg.mesh();
    let init = cfg.initial.build(&mesh);
    cfg.scheme
        .presets
        .iter()
        .map(|&kind| {
            let outs = cfg
                .time
                .k
                .par_iter()
                .map(|&k| {
                    let out = run_one(&mesh, &cfg.material, &cfg.scheme_params(kind, k), &init, cfg.time.t_final)?;
                    require_completed(&out, label(kind, k))?;
                    Ok((k, out))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(UnitLengthTable {
                scheme: kind,
                max_orthogonality: outs.iter().map(|(_, o)| o.max_orthogonality).fold(0.0, f64::max),
                rows: outs
                    .iter()
                    .map(|(k, o)| UnitLengthRow {
                        k: *k,
                        err_l1: o.max_err_l1_unit,
                        err_linf: o.max_err_linf_unit,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// One time series of the energy-dissipation experiment.
#[derive(Debug, Clone)]
pub struct EnergySeries {
    pub scheme: SchemeKind,
    pub k: f64,
    pub outcome: RunOutcome,
}

impl EnergySeries {
    /// `|E(T) − E(0)|`.
    pub fn energy_change(&self) -> f64 {
        (self.outcome.final_energy - self.outcome.initial_energy).abs()
    }
}

pub fn energy_dissipation(cfg: &ExperimentConfig) -> Result<Vec<EnergySeries>> {
    let mesh = cfg.mesh();
    let init = cfg.initial.build(&mesh);
    let cells: Vec<(SchemeKind, f64)> = cfg
        .scheme
        .presets
        .iter()
        .flat_map(|&kind| cfg.time.k.iter().map(move |&k| (kind, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(kind, k)| {
            let outcome = run_one(&mesh, &cfg.material, &cfg.scheme_params(kind, k), &init, cfg.time.t_final)?;
            Ok(EnergySeries { scheme: kind, k, outcome })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NutationResult {
    pub relaxation: RunOutcome,
    /// Energy change of the last relaxation step.
    pub relax_last_change: f64,
    pub relax_converged: bool,
    pub dynamics: RunOutcome,
}

/// Relaxes without precession under the baseline field, projects, then runs
/// the configured scheme under the configured (pulsed) field.
pub fn nutation(cfg: &ExperimentConfig) -> Result<NutationResult> {
    let mesh = cfg.mesh();
    let ncfg = cfg.nutation.clone().unwrap_or_default();
    let relax_material = MaterialParams {
        alpha: ncfg.relax_alpha,
        zeeman: ZeemanField::constant(cfg.material.zeeman.baseline()),
        ..cfg.material
    };
    let mut relax_scheme = SchemeParams::minimization(ncfg.relax_k);
    relax_scheme.solver_tol = cfg.scheme.solver_tol;
    let stretch = ncfg.relax_stretch.unwrap_or(cfg.material.lambda100);
    let relax_init = InitialData::uniform(&mesh, Vec3::x()).with_stretch(&mesh, stretch);
    let mut last = [f64::NAN; 2];
    let relaxation = Simulation::new(&mesh, &relax_material, &relax_scheme)?.run_with_observer(
        &relax_init,
        ncfg.relax_t_final,
        |info| last = [last[1], info.energy.total()],
    )?;
    require_completed(&relaxation, "nutation relaxation".into())?;
    let relax_last_change = (last[1] - last[0]).abs();
    let relax_converged = relax_last_change <= ncfg.relax_energy_tol;
    if !relax_converged {
        log::warn!("relaxation not converged: last energy change {relax_last_change:e} per step");
    }

    let init = InitialData {
        m0: nodal_project(&relaxation.final_state.m_curr)?,
        u0: relaxation.final_state.u_curr.clone(),
        udot0: NodalVectorField::zeros(mesh.num_nodes()),
    };
    let kind = cfg.scheme.presets[0];
    let dynamics = run_one(&mesh, &cfg.material, &cfg.scheme_params(kind, cfg.time.k[0]), &init, cfg.time.t_final)?;
    Ok(NutationResult {
        relaxation,
        relax_last_change,
        relax_converged,
        dynamics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCell {
    pub beta: f64,
    pub n: usize,
    pub h_max: f64,
    pub k: f64,
    /// `None` for a failed run.
    pub final_energy: Option<f64>,
    /// Over the accepted steps.
    pub max_orthogonality: f64,
}

/// Cross product of β, mesh size and time step; the first preset supplies
/// everything but β.
pub fn stability(cfg: &ExperimentConfig) -> Result<Vec<StabilityCell>> {
    let kind = cfg.scheme.presets[0];
    let meshes: Vec<TetMesh> = cfg
        .mesh
        .sizes()
        .into_iter()
        .map(|n| TetMesh::structured_cube(n, cfg.mesh.side))
        .collect();
    let mut cells = Vec::new();
    for beta in cfg.betas() {
        for (mi, mesh) in meshes.iter().enumerate() {
            for &k in &cfg.time.k {
                cells.push((beta, mi, mesh, k));
            }
        }
    }
    let sizes = cfg.mesh.sizes();
    cells
        .par_iter()
        .map(|&(beta, mi, mesh, k)| {
            let mut scheme = cfg.scheme_params(kind, k);
            scheme.newmark.beta = beta;
            let init = cfg.initial.build(mesh);
            let out = run_one(mesh, &cfg.material, &scheme, &init, cfg.time.t_final)?;
            Ok(StabilityCell {
                beta,
                n: sizes[mi],
                h_max: mesh.h_max(),
                k,
                final_energy: out.status.is_completed().then_some(out.final_energy),
                max_orthogonality: out.max_orthogonality,
            })
        })
        .collect()
}

/// A single run of the first preset at the first step.
pub fn single_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mesh = cfg.mesh();
    let init = cfg.initial.build(&mesh);
    let kind = cfg.scheme.presets[0];
    run_one(&mesh, &cfg.material, &cfg.scheme_params(kind, cfg.time.k[0]), &init, cfg.time.t_final)
}

/// What an experiment wrote and whether all its runs completed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub all_completed: bool,
}

/// Runs the configured experiment and writes its CSV files into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut files = Vec::new();
    let mut summary = String::new();
    let mut all_completed = true;
    match cfg.experiment {
        ExperimentKind::ConvergenceTime => {
            for table in convergence_time(cfg)? {
                let path = out_dir.join(format!("convergence-time-{}.csv", table.scheme.name()));
                write_convergence_csv(&path, &table)?;
                files.push(path);
                let _ = writeln!(summary, "{} (k_ref = {:e})", table.scheme.name(), table.k_ref);
                let (om, ou) = (table.orders_m(), table.orders_u());
                for (i, r) in table.rows.iter().enumerate() {
                    let _ = write!(summary, "  k = {:<10e} err_m = {:.4e}  err_u = {:.4e}", r.k, r.err_m_h1, r.err_u_h1);
                    if i > 0 {
                        let _ = write!(summary, "  order_m = {:.3}  order_u = {:.3}", om[i - 1], ou[i - 1]);
                    }
                    summary.push('\n');
                }
            }
        }
        ExperimentKind::UnitLength => {
            for table in unit_length(cfg)? {
                let path = out_dir.join(format!("unit-length-{}.csv", table.scheme.name()));
                write_unit_length_csv(&path, &table)?;
                files.push(path);
                let _ = writeln!(summary, "{}", table.scheme.name());
                let orders = table.orders_l1();
                for (i, r) in table.rows.iter().enumerate() {
                    let _ = write!(summary, "  k = {:<12e} err_L1 = {:.4e}  err_Linf = {:.4e}", r.k, r.err_l1, r.err_linf);
                    if i > 0 {
                        let _ = write!(summary, "  order = {:.3}", orders[i - 1]);
                    }
                    summary.push('\n');
                }
            }
        }
        ExperimentKind::EnergyDissipation => {
            for series in energy_dissipation(cfg)? {
                let path = out_dir.join(format!("energy-{}.csv", label(series.scheme, series.k)));
                write_series_csv(&path, &series.outcome.records)?;
                files.push(path);
                all_completed &= series.outcome.status.is_completed();
                let _ = writeln!(
                    summary,
                    "{:<18} k = {:<8e} E(0) = {:.8e}  E(T) = {:.8e}  |change| = {:.4e}  {}",
                    series.scheme.name(),
                    series.k,
                    series.outcome.initial_energy,
                    series.outcome.final_energy,
                    series.energy_change(),
                    status_word(&series.outcome.status),
                );
            }
        }
        ExperimentKind::Nutation => {
            let result = nutation(cfg)?;
            let relax_path = out_dir.join("nutation-relaxation.csv");
            write_series_csv(&relax_path, &result.relaxation.records)?;
            let path = out_dir.join("nutation.csv");
            write_series_csv(&path, &result.dynamics.records)?;
            files.extend([relax_path, path]);
            all_completed &= result.dynamics.status.is_completed();
            let _ = writeln!(
                summary,
                "relaxation: E = {:.8e}, last step change {:.3e}{}",
                result.relaxation.final_energy,
                result.relax_last_change,
                if result.relax_converged { "" } else { " (not converged)" },
            );
            let _ = writeln!(
                summary,
                "dynamics: E(0) = {:.8e}  E(T) = {:.8e}  {}",
                result.dynamics.initial_energy,
                result.dynamics.final_energy,
                status_word(&result.dynamics.status)
            );
        }
        ExperimentKind::Stability => {
            let cells = stability(cfg)?;
            let path = out_dir.join("stability.csv");
            write_stability_csv(&path, &cells)?;
            let table = stability_table(&cells);
            let txt = out_dir.join("stability.txt");
            fs::write(&txt, &table).map_err(|e| Error::io(format!("writing {}", txt.display()), e))?;
            files.extend([path, txt]);
            summary = table;
        }
        ExperimentKind::SingleRun => {
            let out = single_run(cfg)?;
            let path = out_dir.join("single-run.csv");
            write_full_csv(&path, &out.records)?;
            files.push(path);
            all_completed &= out.status.is_completed();
            let _ = writeln!(
                summary,
                "E(0) = {:.8e}  E(T) = {:.8e}  max err_L1 = {:.4e}  {}",
                out.initial_energy,
                out.final_energy,
                out.max_err_l1_unit,
                status_word(&out.status)
            );
        }
    }
    Ok(ExperimentReport {
        experiment: cfg.experiment,
        files,
        summary,
        all_completed,
    })
}

fn status_word(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Failed { step, kind, .. } => format!("failed at step {step} ({kind:?})"),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

pub const CONVERGENCE_COLUMNS: [&str; 3] = ["inv_k", "err_m_H1", "err_u_H1"];
pub const UNIT_LENGTH_COLUMNS: [&str; 3] = ["inv_k", "err_L1", "err_Linf"];
pub const SERIES_COLUMNS: [&str; 9] = [
    "t",
    "totalenergy",
    "x_mag_avg",
    "y_mag_avg",
    "z_mag_avg",
    "x_disp_avg",
    "y_disp_avg",
    "z_disp_avg",
    "err_L1",
];
pub const STABILITY_COLUMNS: [&str; 6] = ["beta", "n", "h_max", "k", "final_energy", "outcome"];
pub const FULL_COLUMNS: [&str; 17] = [
    "step",
    "t",
    "totalenergy",
    "exchange",
    "zeeman",
    "elastic",
    "kinetic",
    "x_mag_avg",
    "y_mag_avg",
    "z_mag_avg",
    "x_disp_avg",
    "y_disp_avg",
    "z_disp_avg",
    "err_L1",
    "err_Linf",
    "mag_iterations",
    "disp_iterations",
];

pub fn write_convergence_csv(path: &Path, table: &ConvergenceTable) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CONVERGENCE_COLUMNS)?;
    for r in &table.rows {
        w.write_record([num(1.0 / r.k), num(r.err_m_h1), num(r.err_u_h1)])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_unit_length_csv(path: &Path, table: &UnitLengthTable) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(UNIT_LENGTH_COLUMNS)?;
    for r in &table.rows {
        w.write_record([num(1.0 / r.k), num(r.err_l1), num(r.err_linf)])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_series_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SERIES_COLUMNS)?;
    for r in records {
        w.write_record([
            num(r.t),
            num(r.total_energy),
            num(r.mag_avg.x),
            num(r.mag_avg.y),
            num(r.mag_avg.z),
            num(r.disp_avg.x),
            num(r.disp_avg.y),
            num(r.disp_avg.z),
            num(r.err_l1_unit),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_full_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(FULL_COLUMNS)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            num(r.t),
            num(r.total_energy),
            num(r.exchange_energy),
            num(r.zeeman_energy),
            num(r.elastic_energy),
            num(r.kinetic_energy),
            num(r.mag_avg.x),
            num(r.mag_avg.y),
            num(r.mag_avg.z),
            num(r.disp_avg.x),
            num(r.disp_avg.y),
            num(r.disp_avg.z),
            num(r.err_l1_unit),
            num(r.err_linf_unit),
            r.mag_iterations.to_string(),
            r.disp_iterations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_stability_csv(path: &Path, cells: &[StabilityCell]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(STABILITY_COLUMNS)?;
    for c in cells {
        w.write_record([
            num(c.beta),
            c.n.to_string(),
            num(c.h_max),
            num(c.k),
            c.final_energy.map_or_else(|| "NaN".to_string(), num),
            if c.final_energy.is_some() { "ok" } else { "Fail" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Final energies laid out with `k` down and `h_max` across, one block per β.
pub fn stability_table(cells: &[StabilityCell]) -> String {
    let mut betas: Vec<f64> = Vec::new();
    let mut meshes: Vec<(usize, f64)> = Vec::new();
    let mut ks: Vec<f64> = Vec::new();
    for c in cells {
        if !betas.contains(&c.beta) {
            betas.push(c.beta);
        }
        if !meshes.iter().any(|m| m.0 == c.n) {
            meshes.push((c.n, c.h_max));
        }
        if !ks.contains(&c.k) {
            ks.push(c.k);
        }
    }
    let mut s = String::new();
    for beta in betas {
        let _ = writeln!(s, "beta = {beta:.6}");
        let _ = write!(s, "{:>10}", "k \\ h_max");
        for (_, h) in &meshes {
            let _ = write!(s, " {h:>10.3}");
        }
        s.push('\n');
        for &k in &ks {
            let _ = write!(s, "{k:>10.3e}");
            for &(n, _) in &meshes {
                let cell = cells.iter().find(|c| c.beta == beta && c.n == n && c.k == k);
                let text = match cell.and_then(|c| c.final_energy) {
                    Some(e) => format!("{e:.4}"),
                    None if cell.is_some() => "Fail".into(),
                    None => "-".into(),
                };
                let _ = write!(s, " {text:>10}");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
