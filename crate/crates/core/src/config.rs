//! Experiment configuration: JSON documents with named presets for the
//! standard test setups, strict unknown-key rejection, defaults for
//! everything except the grid and the problem selection, and a fully
//! resolved echo that round-trips to an identical configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bregman::BregmanConfig;
use crate::error::{Error, Result};
use crate::fields::{EntryMaps, GroundMetricModel, InteractionKernel};
use crate::forward::{BoundaryPreset, ForwardConfig};
use crate::grid::GridSpec;
use crate::inverse::{Observation, ObjectiveMode, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Recover the metric kernel `g0` (running cost known).
    Metric,
    /// Recover the interaction kernel `K̃` (ground metric known).
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.m, self.n, self.horizon)
    }
}

/// Analytic truth for the metric kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricTruth {
    Constant { value: f64 },
    /// `1 - 0.6 sin(πx)²`
    SinglePeakSin,
    /// `1 - 0.6 sin(2πx)²`
    DoublePeakSin,
    /// `base + amp·sin(2πx)·sin(2πy)` (2-D patterns)
    SinProduct { base: f64, amp: f64 },
}

impl MetricTruth {
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        match self {
            MetricTruth::Constant { value } => *value,
            MetricTruth::SinglePeakSin => 1.0 - 0.6 * (PI * p[0]).sin().powi(2),
            MetricTruth::DoublePeakSin => 1.0 - 0.6 * (2.0 * PI * p[0]).sin().powi(2),
            MetricTruth::SinProduct { base, amp } => {
                base + amp * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            }
        }
    }
}

/// Analytic truth for the interaction kernel: `K̃(x) = exp(-x^T A x / ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTruth {
    pub a: [[f64; 2]; 2],
    pub eps: f64,
}

/// Which θ entries are pinned to their true values during the inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PinSpec {
    None,
    /// Cell 0 (metric) / quotient origin (kernel).
    FirstCell,
    /// The full first grid column `{C(1, ·)}` (2-D metric).
    FirstColumn,
    Cells { cells: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub rho0: BoundaryPreset,
    pub rho_term: BoundaryPreset,
}

/// Inverse-solver parameters; `alpha`/`beta` default to the standard
/// `scale/‖·‖²` weights with the quadrature-weighted observation norms, and
/// may be overridden by absolute values (`*_abs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseParams {
    pub alpha_scale: f64,
    pub alpha0_scale: f64,
    pub beta_scale: f64,
    pub alpha_abs: Option<f64>,
    pub alpha0_abs: Option<f64>,
    pub beta_abs: Option<f64>,
    pub p: u32,
    pub tau_rho: f64,
    pub tau_v: f64,
    pub tau_theta: f64,
    pub sigma: f64,
    pub iters: usize,
    pub objective_mode: ObjectiveMode,
    pub trace_every: usize,
}

impl Default for InverseParams {
    fn default() -> Self {
        InverseParams {
            alpha_scale: 1.0,
            alpha0_scale: 0.0,
            beta_scale: 1.0,
            alpha_abs: None,
            alpha0_abs: None,
            beta_abs: None,
            p: 2,
            tau_rho: 2e-3,
            tau_v: 2e-3,
            tau_theta: 2e-3,
            sigma: 1e-3,
            iters: 60_000,
            objective_mode: ObjectiveMode::L2,
            trace_every: 500,
        }
    }
}

impl InverseParams {
    /// Build the solver configuration for one sweep point against a
    /// (possibly noisy) observation.
    pub fn solver_config(&self, obs: &Observation, gamma: f64, seed: u64) -> SolverConfig {
        let mut cfg = SolverConfig::standard(obs);
        let base_alpha = cfg.alpha;
        cfg.alpha = self.alpha_abs.unwrap_or(base_alpha * self.alpha_scale);
        cfg.alpha0 = self.alpha0_abs.unwrap_or(base_alpha * self.alpha0_scale);
        cfg.beta = self.beta_abs.unwrap_or(cfg.beta * self.beta_scale);
        cfg.gamma = gamma;
        cfg.p = self.p;
        cfg.tau_rho = self.tau_rho;
        cfg.tau_v = self.tau_v;
        cfg.tau_theta = self.tau_theta;
        cfg.sigma = self.sigma;
        cfg.iters = self.iters;
        cfg.objective_mode = self.objective_mode;
        cfg.trace_every = self.trace_every;
        cfg.seed = seed;
        cfg
    }
}

/// Bregman stage parameters (presence enables the stage).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BregmanParams {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub warm_start: bool,
}

impl Default for BregmanParams {
    fn default() -> Self {
        BregmanParams { outer_iters: 7, inner_iters: 0, warm_start: true }
    }
}

impl BregmanParams {
    pub fn to_config(&self) -> BregmanConfig {
        BregmanConfig {
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            warm_start: self.warm_start,
        }
    }
}

/// One experiment document. Every field except `grid` and `problem` has a
/// default; unknown keys are a hard error; a `preset` expands first and
/// explicit fields override it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_metric: Option<MetricTruth>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_kernel: Option<KernelTruth>,
    /// Entry maps of the metric model (metric problem) or of the known
    /// ground metric (kernel problem).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric_maps: Option<EntryMaps>,
    /// Known constant `g0` of the ground metric in the kernel problem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_metric_g0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pins: Option<PinSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseParams>,
    /// Present = run the Bregman stage instead of plain inversion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bregman: Option<BregmanParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Names of the shipped presets.
pub const PRESET_NAMES: &[&str] = &[
    "test-5.1",
    "test-5.2",
    "test-5.3",
    "test-5.4",
    "test-5.5",
    "test-B.1",
    "test-B.1-double",
    "test-B.2-metric",
    "test-B.2-kernel",
    "test-B.3-1",
    "test-B.3-2",
    "test-B.3-3",
    "test-B.4",
];

fn bump1(center: f64) -> BoundaryPreset {
    BoundaryPreset::GaussianBump { center: [center, 0.0], width: 0.12, base: 0.2 }
}

fn bump2(center: [f64; 2]) -> BoundaryPreset {
    BoundaryPreset::GaussianBump { center, width: 0.15, base: 0.2 }
}

fn grid1d_50x30() -> GridConfig {
    GridConfig { dim: 1, m: 50, n: 30, horizon: 1.0 }
}

fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    match name {
        // 2-D metric recovery under the linear entry maps, noiseless.
        "test-5.1" => {
            cfg.grid = Some(GridConfig { dim: 2, m: 50, n: 30, horizon: 1.0 });
            cfg.problem = Some(ProblemKind::Metric);
            cfg.truth_metric = Some(MetricTruth::SinProduct { base: 1.0, amp: 0.5 });
            cfg.metric_maps = Some(EntryMaps::LinearTest51);
            cfg.boundary = Some(BoundaryConfig {
                rho0: bump2([0.3, 0.3]),
                rho_term: bump2([0.7, 0.7]),
            });
            cfg.eps_star = Some(vec![0.0]);
            cfg.gammas = Some(vec![1e-2]);
            cfg.pins = Some(PinSpec::FirstColumn);
            cfg.inverse = Some(InverseParams {
                alpha_scale: 1e3,
                tau_rho: 1e-6,
                tau_v: 1e-6,
                tau_theta: 1e-4,
                sigma: 1e-6,
                iters: 200_000,
                ..Default::default()
            });
        }
        // 2-D kernel recovery, noiseless.
        "test-5.2" => {
            cfg.grid = Some(GridConfig { dim: 2, m: 24, n: 30, horizon: 1.0 });
            cfg.problem = Some(ProblemKind::Kernel);
            cfg.truth_kernel = Some(KernelTruth { a: [[3.0, 1.0], [1.0, 3.0]], eps: 0.5 });
            cfg.metric_maps = Some(EntryMaps::Identity);
            cfg.boundary = Some(BoundaryConfig {
                rho0: bump2([0.3, 0.3]),
                rho_term: bump2([0.7, 0.7]),
            });
            cfg.eps_star = Some(vec![0.0]);
            cfg.gammas = Some(vec![1e-3]);
            cfg.pins = Some(PinSpec::FirstCell);
            cfg.inverse = Some(InverseParams {
                alpha_scale: 100.0,
                tau_rho: 1e-5,
                tau_v: 1e-5,
                tau_theta: 1e-3,
                sigma: 1e-5,
                iters: 150_000,
                ..Default::default()
            });
        }
        // 1-D metric recovery from noisy observations.
        "test-5.3" => {
            cfg.grid = Some(grid1d_50x30());
            cfg.problem = Some(ProblemKind::Metric);
            cfg.truth_metric = Some(MetricTruth::SinglePeakSin);
            cfg.metric_maps = Some(EntryMaps::Scalar);
            cfg.boundary = Some(BoundaryConfig { rho0: bump1(0.3), rho_term: bump1(0.7) });
            cfg.eps_star = Some(vec![0.1, 0.4, 1.0]);
            cfg.gammas = Some(vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3]);
            cfg.pins = Some(PinSpec::FirstCell);
            cfg.inverse = Some(InverseParams::default());
        }
        // 1-D kernel recovery from noisy observations.
        "test-5.4" => {
            cfg.grid = Some(grid1d_50x30());
            cfg.problem = Some(ProblemKind::Kernel);
            cfg.truth_kernel = Some(KernelTruth { a: [[1.0, 0.0], [0.0, 1.0]], eps: 0.1 });
            cfg.metric_maps = Some(EntryMaps::Scalar);
            cfg.known_metric_g0 = Some(1.0);
            cfg.boundary = Some(BoundaryConfig { rho0: bump1(0.3), rho_term: bump1(0.7) });
            cfg.eps_star = Some(vec![0.1, 0.4, 1.0]);
            cfg.gammas = Some(vec![1e-6, 1e-5, 1e-4, 1e-3]);
            cfg.pins = Some(PinSpec::FirstCell);
            cfg.inverse = Some(InverseParams {
                tau_rho: 1e-3,
                tau_v: 1e-3,
                tau_theta: 1e-3,
                sigma: 1e-3,
                iters: 3_000_000,
                ..Default::default()
            });
        }
        // Bregman driver on the test-5.3 data at ε* = 1 with a deliberately
        // too-large γ.
        "test-5.5" => {
            cfg = preset("test-5.3")?;
            cfg.eps_star = Some(vec![1.0]);
            cfg.gammas = Some(vec![1e-2]);
            cfg.seed = Some(2024);
            cfg.bregman = Some(BregmanParams { outer_iters: 7, inner_iters: 0, warm_start: true });
        }
        // Noiseless 1-D metric recovery (γ sweep).
        "test-B.1" => {
            cfg = preset("test-5.3")?;
            cfg.eps_star = Some(vec![0.0]);
        }
        "test-B.1-double" => {
            cfg = preset("test-B.1")?;
            cfg.truth_metric = Some(MetricTruth::DoublePeakSin);
        }
        // KL-objective variants.
        "test-B.2-metric" => {
            cfg = preset("test-B.1")?;
            cfg.gammas = Some(vec![1e-8, 1e-7, 1e-6, 1e-5]);
            cfg.inverse = Some(InverseParams {
                alpha_abs: Some(0.01),
                alpha0_abs: Some(0.01),
                objective_mode: ObjectiveMode::Kl,
                iters: 3_000_000,
                ..Default::default()
            });
        }
        "test-B.2-kernel" => {
            cfg = preset("test-5.4")?;
            cfg.eps_star = Some(vec![0.0]);
            cfg.gammas = Some(vec![1e-5, 1e-4, 1e-3, 1e-2]);
            cfg.inverse = Some(InverseParams {
                alpha_abs: Some(10.0),
                alpha0_abs: Some(10.0),
                objective_mode: ObjectiveMode::Kl,
                tau_rho: 1e-3,
                tau_v: 1e-3,
                tau_theta: 1e-3,
                sigma: 1e-3,
                iters: 3_000_000,
                ..Default::default()
            });
        }
        // 2-D noisy metric tests: (ε*, α-scale, γ) per row of the noisy
        // 2-D table.
        "test-B.3-1" | "test-B.3-2" | "test-B.3-3" => {
            cfg = preset("test-5.1")?;
            let (eps, alpha_scale, gamma) = match name {
                "test-B.3-1" => (0.1, 10.0, 1e-2),
                "test-B.3-2" => (0.4, 1.0, 1e-2),
                _ => (1.0, 100.0, 1.0),
            };
            cfg.eps_star = Some(vec![eps]);
            cfg.gammas = Some(vec![gamma]);
            if let Some(inv) = cfg.inverse.as_mut() {
                inv.alpha_scale = alpha_scale;
            }
        }
        // Bregman driver on the test-5.4 data at ε* = 1.
        "test-B.4" => {
            cfg = preset("test-5.4")?;
            cfg.eps_star = Some(vec![1.0]);
            cfg.gammas = Some(vec![1e-1]);
            cfg.seed = Some(2024);
            cfg.bregman = Some(BregmanParams { outer_iters: 11, inner_iters: 0, warm_start: true });
        }
        _ => return None,
    }
    Some(cfg)
}

impl ExperimentConfig {
    /// Expand the preset (if any), apply defaults, validate. Resolving an
    /// already-resolved config is the identity.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut out = if let Some(name) = &self.preset {
            let mut base = preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset '{name}' (available: {})",
                    PRESET_NAMES.join(", ")
                ))
            })?;
            base.preset = Some(name.clone());
            overlay(&mut base, self);
            base
        } else {
            self.clone()
        };

        let grid = out.grid.ok_or_else(|| {
            Error::Config("missing required key 'grid' ({dim, m, n[, horizon]})".into())
        })?;
        let spec = grid.spec().map_err(|e| Error::Config(e.to_string()))?;
        let problem = out
            .problem
            .ok_or_else(|| Error::Config("missing required key 'problem' (metric | kernel)".into()))?;

        if out.metric_maps.is_none() {
            out.metric_maps = Some(if spec.dim == 1 { EntryMaps::Scalar } else { EntryMaps::Identity });
        }
        let maps = out.metric_maps.unwrap();
        if !maps.valid_for_dim(spec.dim) {
            return Err(Error::Config(format!(
                "entry maps '{}' not defined for dim {}",
                maps.name(),
                spec.dim
            )));
        }
        match problem {
            ProblemKind::Metric => {
                if out.truth_metric.is_none() {
                    out.truth_metric = Some(MetricTruth::SinglePeakSin);
                }
            }
            ProblemKind::Kernel => {
                if out.truth_kernel.is_none() {
                    out.truth_kernel =
                        Some(KernelTruth { a: [[1.0, 0.0], [0.0, 1.0]], eps: 0.1 });
                }
                if out.known_metric_g0.is_none() {
                    out.known_metric_g0 = Some(1.0);
                }
            }
        }
        if out.boundary.is_none() {
            out.boundary = Some(if spec.dim == 1 {
                BoundaryConfig { rho0: bump1(0.3), rho_term: bump1(0.7) }
            } else {
                BoundaryConfig { rho0: bump2([0.3, 0.3]), rho_term: bump2([0.7, 0.7]) }
            });
        }
        out.eps_star.get_or_insert_with(|| vec![0.0]);
        out.gammas.get_or_insert_with(|| vec![1e-4]);
        out.pins.get_or_insert(PinSpec::FirstCell);
        out.theta_init.get_or_insert(1.0);
        out.forward.get_or_insert_with(ForwardConfig::default);
        out.inverse.get_or_insert_with(InverseParams::default);
        out.output_dir.get_or_insert_with(|| "out".to_string());
        out.seed.get_or_insert(7);

        if out.eps_star.as_ref().unwrap().iter().any(|&e| e < 0.0) {
            return Err(Error::Config("eps_star entries must be nonnegative".into()));
        }
        if out.gammas.as_ref().unwrap().is_empty() {
            return Err(Error::Config("gammas must be a nonempty list".into()));
        }
        let p = out.inverse.as_ref().unwrap().p;
        if p != 1 && p != 2 {
            return Err(Error::Config(format!("norm index p must be 1 or 2, got {p}")));
        }
        Ok(out)
    }

    pub fn spec(&self) -> Result<GridSpec> {
        self.grid
            .ok_or_else(|| Error::Config("config not resolved: missing grid".into()))?
            .spec()
    }

    /// The truth metric model (metric problem) or the known ground metric
    /// (kernel problem).
    pub fn metric_model(&self) -> Result<GroundMetricModel> {
        let spec = self.spec()?;
        let maps = self.metric_maps.unwrap_or(EntryMaps::Scalar);
        match self.problem.unwrap_or(ProblemKind::Metric) {
            ProblemKind::Metric => {
                let truth = self
                    .truth_metric
                    .clone()
                    .ok_or_else(|| Error::Config("metric problem needs truth_metric".into()))?;
                GroundMetricModel::from_fn(spec, maps, move |p| truth.sample(p))
            }
            ProblemKind::Kernel => {
                GroundMetricModel::constant(spec, maps, self.known_metric_g0.unwrap_or(1.0))
            }
        }
    }

    /// The truth interaction kernel (kernel problem only).
    pub fn kernel_truth(&self) -> Result<InteractionKernel> {
        let spec = self.spec()?;
        let t = self
            .truth_kernel
            .clone()
            .ok_or_else(|| Error::Config("kernel problem needs truth_kernel".into()))?;
        InteractionKernel::exp_quadratic(spec, t.a, t.eps)
    }

    /// Pinned θ entries with their true values.
    pub fn pinned_entries(&self, truth: &[f64], spec: &GridSpec) -> Result<Vec<(usize, f64)>> {
        let pins = self.pins.clone().unwrap_or(PinSpec::FirstCell);
        let cells: Vec<usize> = match pins {
            PinSpec::None => vec![],
            PinSpec::FirstCell => vec![0],
            PinSpec::FirstColumn => {
                if spec.dim == 1 {
                    vec![0]
                } else {
                    // column i1 = 0: flat ids 0..m
                    (0..spec.m).collect()
                }
            }
            PinSpec::Cells { cells } => cells,
        };
        let mut out = Vec::with_capacity(cells.len());
        for c in cells {
            if c >= truth.len() {
                return Err(Error::Config(format!("pinned entry {c} outside θ (len {})", truth.len())));
            }
            out.push((c, truth[c]));
        }
        Ok(out)
    }
}

/// Overlay explicitly-set fields of `over` onto `base`.
fn overlay(base: &mut ExperimentConfig, over: &ExperimentConfig) {
    macro_rules! take {
        ($field:ident) => {
            if over.$field.is_some() {
                base.$field = over.$field.clone();
            }
        };
    }
    take!(grid);
    take!(problem);
    take!(truth_metric);
    take!(truth_kernel);
    take!(metric_maps);
    take!(known_metric_g0);
    take!(boundary);
    take!(eps_star);
    take!(gammas);
    take!(pins);
    take!(theta_init);
    take!(forward);
    take!(inverse);
    take!(bregman);
    take!(output_dir);
    take!(seed);
}

/// Load and resolve a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Config(
            "empty config; required keys: grid {dim, m, n[, horizon]}, problem (metric | kernel); \
             everything else has defaults (preset, truth_metric, truth_kernel, metric_maps, \
             known_metric_g0, boundary, eps_star, gammas, pins, theta_init, forward, inverse, \
             bregman, output_dir, seed)"
                .into(),
        ));
    }
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    cfg.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_53_expands_to_paper_values() {
        let cfg = ExperimentConfig {
            preset: Some("test-5.3".into()),
            ..Default::default()
        };
        let r = cfg.resolve().unwrap();
        let g = r.grid.unwrap();
        assert_eq!((g.dim, g.m, g.n), (1, 50, 30));
        assert_eq!(r.problem, Some(ProblemKind::Metric));
        let inv = r.inverse.unwrap();
        assert_eq!(inv.p, 2);
        assert_eq!(inv.tau_rho, 2e-3);
        assert_eq!(inv.sigma, 1e-3);
        assert_eq!(inv.iters, 60_000);
        assert_eq!(r.gammas.unwrap(), vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3]);
        assert_eq!(r.eps_star.unwrap(), vec![0.1, 0.4, 1.0]);
    }

    #[test]
    fn explicit_fields_override_preset() {
        let cfg = ExperimentConfig {
            preset: Some("test-5.3".into()),
            eps_star: Some(vec![0.0]),
            gammas: Some(vec![1e-4]),
            ..Default::default()
        };
        let r = cfg.resolve().unwrap();
        assert_eq!(r.eps_star.unwrap(), vec![0.0]);
        assert_eq!(r.gammas.unwrap(), vec![1e-4]);
        assert_eq!(r.inverse.unwrap().iters, 60_000);
    }

    #[test]
    fn resolve_is_idempotent_and_roundtrips() {
        let cfg = ExperimentConfig {
            preset: Some("test-5.4".into()),
            ..Default::default()
        };
        let r = cfg.resolve().unwrap();
        let echoed = serde_json::to_string_pretty(&r).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&echoed).unwrap();
        let r2 = back.resolve().unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn unknown_keys_and_missing_requirements_fail() {
        let bad: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"grid": {"dim":1,"m":8,"n":4}, "spice": 1}"#);
        assert!(bad.is_err());

        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"grid": {"dim":1,"m":8,"n":4}}"#).unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_file_error_lists_required_keys() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("mfginv-empty-{}.json", std::process::id()));
        std::fs::write(&path, "").unwrap();
        let err = load_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid"), "{msg}");
        assert!(msg.contains("problem"), "{msg}");
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn all_presets_resolve() {
        for name in PRESET_NAMES {
            let cfg = ExperimentConfig { preset: Some((*name).into()), ..Default::default() };
            let r = cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(r.grid.is_some());
            assert!(r.problem.is_some());
        }
    }

    #[test]
    fn pinned_column_in_2d() {
        let cfg = ExperimentConfig { preset: Some("test-5.1".into()), ..Default::default() };
        let r = cfg.resolve().unwrap();
        let spec = r.spec().unwrap();
        let truth: Vec<f64> = (0..spec.cells()).map(|c| c as f64).collect();
        let pins = r.pinned_entries(&truth, &spec).unwrap();
        assert_eq!(pins.len(), spec.m);
        assert_eq!(pins[3], (3, 3.0));
    }
}
