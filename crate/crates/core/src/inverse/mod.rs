//! Inverse solvers: recover the metric kernel `g0` or the interaction kernel
//! `K̃` from observed trajectories by a primal-dual iteration on the
//! Lagrangian of the constrained misfit problem.
//!
//! Both models share the objective structure
//!
//! ```text
//! Σ α/2 (ρ-ρ̂)² + Σ β/2 ‖v-v̂‖² + Σ α0/(2dt) boundary² + γ/(p·dt) Σ |∇θ/dx|^p
//! ```
//!
//! subject to the four discrete constraints (HJE on faces, continuity, curl
//! matching, zero loop sums), with multipliers `ψ, Φ, χ, Θ`. Each iteration
//! descends the primal variables `(ρ, v, θ)`, extrapolates
//! `x* = 2x^{k+1} - x^k`, and ascends the duals on the constraint residuals
//! evaluated at the starred primals.

pub mod kernel;
pub mod metric;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ResidualNorms, Residuals, StaggeredState, RHO_FLOOR};
use crate::grid::{CellField, FaceField, GridSpec, LineField, TimeLayout};

pub use kernel::{
    grad_primal_kernel, inverse_objective_kernel, lagrangian_kernel, pdhg_step_kernel,
    solve_inverse_kernel,
};
pub use metric::{
    grad_primal_metric, inverse_objective, lagrangian_metric, pdhg_step, solve_inverse_metric,
};

/// Observed density/velocity trajectories (possibly noisy).
#[derive(Clone, Debug)]
pub struct Observation {
    pub rho_hat: CellField,
    pub vel_hat: FaceField,
}

impl Observation {
    pub fn new(rho_hat: CellField, vel_hat: FaceField) -> Result<Self> {
        if rho_hat.layout() != TimeLayout::HalfStep {
            return Err(Error::LayoutMismatch {
                expected: "cell-half",
                found: rho_hat.layout().name(),
            });
        }
        if rho_hat.spec() != vel_hat.spec() || vel_hat.steps() != rho_hat.spec().n {
            return Err(Error::InvalidParameter("observation fields disagree on the grid".into()));
        }
        if !(rho_hat.all_finite() && vel_hat.all_finite()) {
            return Err(Error::InvalidParameter("observation contains non-finite values".into()));
        }
        Ok(Observation { rho_hat, vel_hat })
    }

    pub fn from_state(state: &StaggeredState) -> Self {
        Observation { rho_hat: state.rho.clone(), vel_hat: state.vel.clone() }
    }

    pub fn spec(&self) -> &GridSpec {
        self.rho_hat.spec()
    }

    /// Squared discrete L2 norm of the density observation over the full
    /// space-time field, `Σ ρ̂² · dx^d · dt` (the quadrature weighting makes
    /// the auto-computed misfit weights grid-independent).
    pub fn rho_norm_sq(&self) -> f64 {
        let w = self.spec().cell_volume() * self.spec().dt();
        self.rho_hat.values().iter().map(|x| x * x).sum::<f64>() * w
    }

    /// Squared discrete L2 norm of the velocity observation.
    pub fn vel_norm_sq(&self) -> f64 {
        let w = self.spec().cell_volume() * self.spec().dt();
        self.vel_hat.values().iter().map(|x| x * x).sum::<f64>() * w
    }
}

/// Multipliers of the four discrete constraints.
///
/// `psi` lives on faces for `j = 2..n` (`n-1` steps), `phi` on cells at
/// integer steps, `chi` on cells at integer steps (2-D only), and the loop
/// multipliers `Θ` have one entry per axis/line/step.
#[derive(Clone, Debug)]
pub struct DualPack {
    pub psi: FaceField,
    pub phi: CellField,
    pub chi: Option<CellField>,
    pub theta_loop: LineField,
}

impl DualPack {
    pub fn zeros(spec: GridSpec) -> Self {
        DualPack {
            psi: FaceField::zeros_with_steps(spec, spec.n - 1),
            phi: CellField::zeros(spec, TimeLayout::IntStep),
            chi: if spec.dim == 2 { Some(CellField::zeros(spec, TimeLayout::IntStep)) } else { None },
            theta_loop: LineField::zeros(spec),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.psi.all_finite()
            && self.phi.all_finite()
            && self.chi.as_ref().map(|c| c.all_finite()).unwrap_or(true)
            && self.theta_loop.values().iter().all(|x| x.is_finite())
    }

    /// Gradient-ascent step on the constraint residuals (evaluated by the
    /// caller at the extrapolated primals). `Θ` ascends on the plain loop
    /// sums, matching the stated update rule.
    pub fn ascend(&mut self, residuals: &Residuals, sigma: f64) {
        for (d, r) in self.psi.values_mut().iter_mut().zip(residuals.hje.values()) {
            *d += sigma * r;
        }
        for (d, r) in self.phi.values_mut().iter_mut().zip(residuals.cont.values()) {
            *d += sigma * r;
        }
        if let (Some(chi), Some(curl)) = (self.chi.as_mut(), residuals.curl.as_ref()) {
            for (d, r) in chi.values_mut().iter_mut().zip(curl.values()) {
                *d += sigma * r;
            }
        }
        for (d, r) in self.theta_loop.values_mut().iter_mut().zip(residuals.loop_sums.values()) {
            *d += sigma * r;
        }
    }
}

/// How the data misfit is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// Squared L2 distances, the default.
    L2,
    /// KL divergence on densities plus the `ρ̂/2`-weighted velocity misfit
    /// (`β` is unused in this mode).
    Kl,
}

/// Weights, norm index, step sizes and budget of one inverse solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub alpha0: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Norm index of the H^p regularizer; 1 or 2.
    pub p: u32,
    pub tau_rho: f64,
    pub tau_v: f64,
    pub tau_theta: f64,
    pub sigma: f64,
    pub iters: usize,
    /// θ entries held fixed (never moved by the iteration).
    #[serde(default)]
    pub fixed_mask: Vec<usize>,
    pub objective_mode: ObjectiveMode,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    /// Cadence of trace rows (0 = only first/last).
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    /// Cadence of non-finite iterate checks.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    /// Initialize the free boundary density slices from the observation
    /// (the alternative starts them at the interior constant).
    #[serde(default = "default_true")]
    pub init_boundary_from_obs: bool,
    /// Recorded in run metadata; the solve itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn default_rho_min() -> f64 {
    RHO_FLOOR
}

fn default_trace_every() -> usize {
    500
}

fn default_check_every() -> usize {
    100
}

fn default_true() -> bool {
    true
}

impl SolverConfig {
    /// Standard weights: `α = 1/‖ρ̂‖²`, `β = 1/‖v̂‖²`, `α0 = 0` (the plain
    /// stacked-vector norms of the observation), `p = 2`. A degenerate
    /// all-zero observation block falls back to weight 1.
    pub fn standard(obs: &Observation) -> Self {
        let inv = |norm_sq: f64| if norm_sq > 0.0 { 1.0 / norm_sq } else { 1.0 };
        SolverConfig {
            alpha: inv(obs.rho_norm_sq()),
            alpha0: 0.0,
            beta: inv(obs.vel_norm_sq()),
            gamma: 1e-4,
            p: 2,
            tau_rho: 2e-3,
            tau_v: 2e-3,
            tau_theta: 2e-3,
            sigma: 1e-3,
            iters: 60_000,
            fixed_mask: Vec::new(),
            objective_mode: ObjectiveMode::L2,
            rho_min: RHO_FLOOR,
            trace_every: default_trace_every(),
            check_every: default_check_every(),
            init_boundary_from_obs: true,
            seed: 0,
        }
    }

    /// θ step size respecting the `H^2` regularizer curvature: the
    /// regularizer Hessian norm is bounded by `4·dim·γ/(dt·dx²)`, so the
    /// plain descent step must stay below `2/L`. Inactive for `p = 1` (no
    /// curvature) and whenever the configured step is already safe.
    pub fn tau_theta_effective(&self, spec: &GridSpec) -> f64 {
        if self.p != 2 || self.gamma == 0.0 {
            return self.tau_theta;
        }
        let l = 4.0 * spec.dim as f64 * self.gamma / (spec.dt() * spec.dx() * spec.dx());
        self.tau_theta.min(1.6 / l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidParameter(format!("norm index p must be 1 or 2, got {}", self.p)));
        }
        for (name, v) in [
            ("tau_rho", self.tau_rho),
            ("tau_v", self.tau_v),
            ("tau_theta", self.tau_theta),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("step size {name} must be > 0, got {v}")));
            }
        }
        for (name, v) in
            [("alpha", self.alpha), ("alpha0", self.alpha0), ("beta", self.beta), ("gamma", self.gamma)]
        {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("weight {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One trace row of an inverse solve.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub obj: f64,
    pub misfit_rho: f64,
    pub misfit_v: f64,
    pub reg: f64,
    pub residuals: ResidualNorms,
    /// Relative L2 error of θ against the supplied truth, when available.
    pub theta_err: Option<f64>,
}

/// Result of an inverse solve.
pub struct InverseSolution {
    pub state: StaggeredState,
    pub duals: DualPack,
    pub trace: Vec<TraceRow>,
    /// Relative L2 θ-error of the final iterate (when truth was supplied).
    pub final_theta_err: Option<f64>,
}

/// `|x|^{p-1}·sign(x)` with the `sign(0) = 0` convention (p = 1 or 2).
#[inline]
pub(crate) fn sgnpow(x: f64, p: u32) -> f64 {
    if p == 2 {
        x
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn abspow(x: f64, p: u32) -> f64 {
    if p == 2 { x * x } else { x.abs() }
}

/// Data-misfit terms of the inverse objective: `(misfit_rho_with_boundary,
/// misfit_v)`. The ρ part includes the `α0` boundary terms.
pub(crate) fn misfit_terms(
    state: &StaggeredState,
    obs: &Observation,
    cfg: &SolverConfig,
) -> (f64, f64) {
    let spec = *state.spec();
    let dt = spec.dt();
    match cfg.objective_mode {
        ObjectiveMode::L2 => {
            let mut mr = 0.0;
            for (x, y) in state.rho.values().iter().zip(obs.rho_hat.values()) {
                let d = x - y;
                mr += d * d;
            }
            mr *= 0.5 * cfg.alpha;
            let mut mb = 0.0;
            for t in [0, spec.n] {
                for (x, y) in state.rho.slice(t).iter().zip(obs.rho_hat.slice(t)) {
                    let d = x - y;
                    mb += d * d;
                }
            }
            mr += mb * 0.5 * cfg.alpha0 / dt;
            let mut mv = 0.0;
            for (x, y) in state.vel.values().iter().zip(obs.vel_hat.values()) {
                let d = x - y;
                mv += d * d;
            }
            (mr, 0.5 * cfg.beta * mv)
        }
        ObjectiveMode::Kl => {
            let floor = cfg.rho_min;
            let kl = |r: f64, rh: f64| {
                let r = r.max(floor);
                let rh = rh.max(floor);
                r * (r / rh).ln()
            };
            let mut mr = 0.0;
            for (x, y) in state.rho.values().iter().zip(obs.rho_hat.values()) {
                mr += kl(*x, *y);
            }
            mr *= cfg.alpha;
            let mut mb = 0.0;
            for t in [0, spec.n] {
                for (x, y) in state.rho.slice(t).iter().zip(obs.rho_hat.slice(t)) {
                    mb += kl(*x, *y);
                }
            }
            mr += mb * cfg.alpha0 / dt;
            let mut mv = 0.0;
            for axis in 0..spec.dim {
                for t in 0..spec.n {
                    let v = state.vel.slice(axis, t);
                    let vh = obs.vel_hat.slice(axis, t);
                    let rh = obs.rho_hat.slice(t);
                    for cell in 0..spec.cells() {
                        let d = v[cell] - vh[cell];
                        mv += 0.5 * rh[cell] * d * d;
                    }
                }
            }
            (mr, mv)
        }
    }
}

/// Gradient of the ρ misfit at one time slice. Interior slices carry the `α`
/// term only; slices `0` and `n` add the `α0/dt` boundary weight.
#[inline]
pub(crate) fn misfit_rho_grad(
    cfg: &SolverConfig,
    dt: f64,
    t: usize,
    n: usize,
    rho: f64,
    rho_hat: f64,
) -> f64 {
    let weight = if t == 0 || t == n { cfg.alpha + cfg.alpha0 / dt } else { cfg.alpha };
    match cfg.objective_mode {
        ObjectiveMode::L2 => weight * (rho - rho_hat),
        ObjectiveMode::Kl => {
            let r = rho.max(cfg.rho_min);
            let rh = rho_hat.max(cfg.rho_min);
            weight * ((r / rh).ln() + 1.0)
        }
    }
}

/// Relative L2 error of θ against a reference.
pub fn theta_error(theta: &[f64], truth: &[f64]) -> f64 {
    crate::fields::relative_l2(theta, truth)
}

/// The per-face and per-cell coefficients with which `w = G_M v` and `ξ`
/// enter the Lagrangian, assembled from the duals. Shared by the v- and
/// θ-gradients of both inverse models, which keeps the two consistent by
/// construction.
pub(crate) struct LagrangeCoefs {
    /// Coefficient of `w_{i+e_v/2,j}` (ψ time-pairing + χ + Θ/dx terms).
    pub w: FaceField,
    /// Coefficient of `ξ_{i,j-1/2}` (slices `1..n-1`; 0 elsewhere):
    /// `Σ_v (ψ_{i-e_v/2,j} - ψ_{i+e_v/2,j})/dx`.
    pub xi: CellField,
}

pub(crate) fn lagrange_coefs(spec: &GridSpec, duals: &DualPack) -> LagrangeCoefs {
    let cells = spec.cells();
    let (dx, dt) = (spec.dx(), spec.dt());
    let n = spec.n;

    let mut w = FaceField::zeros(*spec);
    for axis in 0..spec.dim {
        for t in 0..n {
            // ψ time pairing: w_{·,1} pairs with -ψ_2/dt, interior steps with
            // (ψ_j - ψ_{j+1})/dt, and w_{·,n} with +ψ_n/dt.
            let slice = w.slice_mut(axis, t);
            if t == 0 {
                let p = duals.psi.slice(axis, 0);
                for cell in 0..cells {
                    slice[cell] = -p[cell] / dt;
                }
            } else if t == n - 1 {
                let p = duals.psi.slice(axis, n - 2);
                for cell in 0..cells {
                    slice[cell] = p[cell] / dt;
                }
            } else {
                let p_cur = duals.psi.slice(axis, t - 1);
                let p_next = duals.psi.slice(axis, t);
                for cell in 0..cells {
                    slice[cell] = (p_cur[cell] - p_next[cell]) / dt;
                }
            }
        }
    }
    if let Some(chi) = duals.chi.as_ref() {
        for t in 0..n {
            let c = chi.slice(t);
            for cell in 0..cells {
                // x-faces couple through (χ_{i-e2} - χ_i)/dx, y-faces through
                // -(χ_{i-e1} - χ_i)/dx.
                let ax = (c[spec.bwd(cell, 1)] - c[cell]) / dx;
                let ay = -(c[spec.bwd(cell, 0)] - c[cell]) / dx;
                let o = w.slice_mut(0, t);
                o[cell] += ax;
                let o = w.slice_mut(1, t);
                o[cell] += ay;
            }
        }
    }
    for axis in 0..spec.dim {
        for t in 0..n {
            let slice = w.slice_mut(axis, t);
            for cell in 0..cells {
                slice[cell] += duals.theta_loop.at(axis, spec.line_of(cell, axis), t) / dx;
            }
        }
    }

    let mut xi = CellField::zeros(*spec, TimeLayout::HalfStep);
    for t in 1..n {
        let s = t - 1; // ψ step aligned with the ξ slice at half-step t
        let slice = xi.slice_mut(t);
        for axis in 0..spec.dim {
            let p = duals.psi.slice(axis, s);
            for cell in 0..cells {
                slice[cell] += (p[spec.bwd(cell, axis)] - p[cell]) / dx;
            }
        }
    }

    LagrangeCoefs { w, xi }
}

/// Duality pairing `Σ ψ·r_hje + Σ Φ·r_cont + Σ χ·r_curl + Σ Θ·r_loop/dx`.
///
/// The loop term carries the `1/dx` of the Lagrangian; the Θ ascent step uses
/// the plain loop sums.
pub(crate) fn constraint_pairing(spec: &GridSpec, duals: &DualPack, res: &Residuals) -> f64 {
    let mut acc = 0.0;
    for (d, r) in duals.psi.values().iter().zip(res.hje.values()) {
        acc += d * r;
    }
    for (d, r) in duals.phi.values().iter().zip(res.cont.values()) {
        acc += d * r;
    }
    if let (Some(chi), Some(curl)) = (duals.chi.as_ref(), res.curl.as_ref()) {
        for (d, r) in chi.values().iter().zip(curl.values()) {
            acc += d * r;
        }
    }
    let dx = spec.dx();
    for (d, r) in duals.theta_loop.values().iter().zip(res.loop_sums.values()) {
        acc += d * r / dx;
    }
    acc
}

/// Initial primal iterate: interior density a positive constant
/// (the mean observed value), boundary slices copied from the observation
/// unless the config opts out, velocity zero.
pub(crate) fn initial_state(obs: &Observation, cfg: &SolverConfig) -> StaggeredState {
    let spec = *obs.spec();
    let mean = obs.rho_hat.values().iter().sum::<f64>() / obs.rho_hat.values().len() as f64;
    let mut rho = CellField::constant(spec, TimeLayout::HalfStep, mean);
    if cfg.init_boundary_from_obs {
        rho.slice_mut(0).copy_from_slice(obs.rho_hat.slice(0));
        rho.slice_mut(spec.n).copy_from_slice(obs.rho_hat.slice(spec.n));
    }
    StaggeredState { rho, vel: FaceField::zeros(spec) }
}
