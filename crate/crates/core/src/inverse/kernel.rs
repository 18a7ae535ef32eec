//! Inverse solver for the interaction convolution kernel `K̃`.
//!
//! Same saddle-point structure as the metric solver with the potential term
//! of `ξ` replaced by the convolution `Σ_{i'} K(i,i') ρ_{i'} dx^d` and the
//! `H^p` regularizer running over quotient-grid neighbor pairs (the quotient
//! grid discretizes `[0, 1/2]^d` and does not wrap). The ground metric is
//! known and fixed.
//!
//! The gradient blocks follow from the same rearrangement as the metric
//! case:
//!
//! - `d_ρ` gains the adjoint of the convolution acting on the `ξ`
//!   coefficients (the adjoint of `K*· ` is `K*·` itself by kernel
//!   symmetry);
//! - `d_K̃[q]` accumulates, over all cell pairs at torus distance `q`, the
//!   product of the `ξ` coefficient and the density, times `dx^d`, plus the
//!   regularizer subgradient.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{
    cross_correlate_direct, cross_correlate_fft, quotient_shifts, residuals, Energy,
    ExpandedKernel, GroundMetricModel, InteractionKernel, Residuals, StaggeredState,
    FFT_CUTOVER_M,
};
use crate::grid::{CellField, FaceField, GridSpec};

use super::{
    abspow, constraint_pairing, initial_state, lagrange_coefs, misfit_rho_grad, misfit_terms,
    sgnpow, theta_error, DualPack, InverseSolution, Observation, ObjectiveMode, SolverConfig,
    TraceRow,
};

/// FFT plans and the pair-multiplicity table, built once per solve.
pub struct KernelWorkspace {
    spec: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `shifts[q]` = flat offsets at torus distance `q` (quotient index).
    shifts: Vec<Vec<usize>>,
}

impl KernelWorkspace {
    pub fn new(spec: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(spec.m);
        let inv = planner.plan_fft_inverse(spec.m);
        KernelWorkspace { spec, fwd, inv, shifts: quotient_shifts(&spec) }
    }

    pub fn expand(&self, ktilde: &InteractionKernel) -> ExpandedKernel {
        ktilde.expand_with(self.fwd.clone(), self.inv.clone())
    }

    fn cross_correlate(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        if self.spec.m <= FFT_CUTOVER_M {
            cross_correlate_direct(&self.spec, a, b)
        } else {
            cross_correlate_fft(&self.spec, &self.fwd, &self.inv, a, b)
        }
    }
}

/// Inverse objective of the kernel model (misfits plus the `H^p`
/// regularizer of `K̃` over the quotient grid).
pub fn inverse_objective_kernel(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    obs: &Observation,
    cfg: &SolverConfig,
) -> f64 {
    let (mr, mv) = misfit_terms(state, obs, cfg);
    mr + mv + kernel_regularizer(ktilde, cfg)
}

/// `Σ_{q ∈ Ṽ} Σ_{e_v: q+e_v ∈ Ṽ} γ/(p·dt) |(K̃_{q+e_v} - K̃_q)/dx|^p`
/// (no wraparound on the quotient grid).
pub fn kernel_regularizer(ktilde: &InteractionKernel, cfg: &SolverConfig) -> f64 {
    let spec = *ktilde.spec();
    let (dx, dt) = (spec.dx(), spec.dt());
    let qdim = ktilde.qdim();
    let vals = ktilde.values();
    let mut acc = 0.0;
    if spec.dim == 1 {
        for q in 0..qdim - 1 {
            acc += abspow((vals[q + 1] - vals[q]) / dx, cfg.p);
        }
    } else {
        for q1 in 0..qdim {
            for q2 in 0..qdim {
                let q = q1 * qdim + q2;
                if q1 + 1 < qdim {
                    acc += abspow((vals[q + qdim] - vals[q]) / dx, cfg.p);
                }
                if q2 + 1 < qdim {
                    acc += abspow((vals[q + 1] - vals[q]) / dx, cfg.p);
                }
            }
        }
    }
    acc * cfg.gamma / (cfg.p as f64 * dt)
}

fn kernel_reg_subgrad(ktilde: &InteractionKernel, cfg: &SolverConfig, q: usize) -> f64 {
    let spec = *ktilde.spec();
    let (dx, dt) = (spec.dx(), spec.dt());
    let qdim = ktilde.qdim();
    let vals = ktilde.values();
    let scale = cfg.gamma / (dt * dx.powi(cfg.p as i32));
    let mut acc = 0.0;
    if spec.dim == 1 {
        if q + 1 < qdim {
            acc += sgnpow(vals[q] - vals[q + 1], cfg.p);
        }
        if q >= 1 {
            acc += sgnpow(vals[q] - vals[q - 1], cfg.p);
        }
    } else {
        let (q1, q2) = (q / qdim, q % qdim);
        if q1 + 1 < qdim {
            acc += sgnpow(vals[q] - vals[q + qdim], cfg.p);
        }
        if q1 >= 1 {
            acc += sgnpow(vals[q] - vals[q - qdim], cfg.p);
        }
        if q2 + 1 < qdim {
            acc += sgnpow(vals[q] - vals[q + 1], cfg.p);
        }
        if q2 >= 1 {
            acc += sgnpow(vals[q] - vals[q - 1], cfg.p);
        }
    }
    scale * acc
}

/// Lagrangian of the kernel inverse model.
pub fn lagrangian_kernel(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    metric: &GroundMetricModel,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
) -> f64 {
    let expanded = ktilde.expand();
    let res = residuals(state, metric, Energy::Interaction(&expanded));
    inverse_objective_kernel(state, ktilde, obs, cfg)
        + constraint_pairing(state.spec(), duals, &res)
}

/// Explicit primal gradients `(d_ρ, d_v, d_K̃)` of [`lagrangian_kernel`];
/// pinned `K̃` entries are zeroed.
pub fn grad_primal_kernel(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    metric: &GroundMetricModel,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
) -> (CellField, FaceField, Vec<f64>) {
    let ws = KernelWorkspace::new(*state.spec());
    grad_primal_kernel_ws(state, ktilde, metric, duals, obs, cfg, &ws, None)
}

#[allow(clippy::too_many_arguments)]
fn grad_primal_kernel_ws(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    metric: &GroundMetricModel,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
    ws: &KernelWorkspace,
    q_shift: Option<&[f64]>,
) -> (CellField, FaceField, Vec<f64>) {
    let spec = *state.spec();
    let cells = spec.cells();
    let n = spec.n;
    let (dx, dt) = (spec.dx(), spec.dt());
    let vol = spec.cell_volume();
    let coefs = lagrange_coefs(&spec, duals);
    let expanded = ws.expand(ktilde);

    // d_rho: misfit + Φ couplings + the adjoint convolution of the ξ
    // coefficients (replacing the metric model's F'' term).
    let mut d_rho = CellField::zeros(spec, crate::grid::TimeLayout::HalfStep);
    for t in 0..=n {
        let rs = state.rho.slice(t);
        let rhs = obs.rho_hat.slice(t);
        let slice = d_rho.slice_mut(t);
        if t == 0 {
            let p = duals.phi.slice(0);
            for cell in 0..cells {
                let mut g = misfit_rho_grad(cfg, dt, 0, n, rs[cell], rhs[cell]) - p[cell] / dt;
                for axis in 0..spec.dim {
                    g += (p[cell] - p[spec.fwd(cell, axis)]) / dx * state.vel.at(axis, 0, cell);
                }
                slice[cell] = g;
            }
        } else if t == n {
            let p = duals.phi.slice(n - 1);
            for cell in 0..cells {
                slice[cell] =
                    misfit_rho_grad(cfg, dt, n, n, rs[cell], rhs[cell]) + p[cell] / dt;
            }
        } else {
            let p_prev = duals.phi.slice(t - 1);
            let p_cur = duals.phi.slice(t);
            let adj = expanded.convolve(coefs.xi.slice(t));
            for cell in 0..cells {
                let mut g = misfit_rho_grad(cfg, dt, t, n, rs[cell], rhs[cell])
                    + (p_prev[cell] - p_cur[cell]) / dt;
                for axis in 0..spec.dim {
                    g += (p_cur[cell] - p_cur[spec.fwd(cell, axis)]) / dx
                        * state.vel.at(axis, t, cell);
                }
                // ξ carries -(K*ρ): the ψ pairing contributes -K*c_ξ.
                g -= adj[cell];
                slice[cell] = g;
            }
        }
    }

    // d_v: as the metric model with the ground metric fixed.
    let mut d_v = FaceField::zeros(spec);
    for t in 0..n {
        let rs = state.rho.slice(t);
        let p = duals.phi.slice(t);
        let cxi = coefs.xi.slice(t);
        let rh = obs.rho_hat.slice(t);
        for cell in 0..cells {
            let g = metric.metric_at(cell);
            let vb = state.vbundle(t, cell);
            let cw = [
                coefs.w.at(0, t, cell),
                if spec.dim == 2 { coefs.w.at(1, t, cell) } else { 0.0 },
            ];
            let gcw = g.mul_vec(cw);
            let gv = g.mul_vec(vb);
            for axis in 0..spec.dim {
                let vh = obs.vel_hat.at(axis, t, cell);
                let mis = match cfg.objective_mode {
                    ObjectiveMode::L2 => cfg.beta * (vb[axis] - vh),
                    ObjectiveMode::Kl => rh[cell] * (vb[axis] - vh),
                };
                let phid = (p[cell] - p[spec.fwd(cell, axis)]) / dx;
                let mut grad = mis + rs[cell] * phid + gcw[axis];
                if t >= 1 {
                    grad += cxi[cell] * gv[axis];
                }
                d_v.set(axis, t, cell, grad);
            }
        }
    }

    // d_ktilde: for each quotient index, the pair sums of (ξ coefficient at
    // i) · ρ at i', accumulated through one cross-correlation per slice.
    let mut d_k = vec![0.0; ktilde.values().len()];
    for t in 1..n {
        let cc = ws.cross_correlate(coefs.xi.slice(t), state.rho.slice(t));
        for (q, shifts) in ws.shifts.iter().enumerate() {
            let mut acc = 0.0;
            for &s in shifts {
                acc += cc[s];
            }
            d_k[q] -= vol * acc;
        }
    }
    for (q, slot) in d_k.iter_mut().enumerate() {
        *slot += kernel_reg_subgrad(ktilde, cfg, q);
    }
    if let Some(qv) = q_shift {
        for (g, qi) in d_k.iter_mut().zip(qv) {
            *g -= qi;
        }
    }
    for &q in &cfg.fixed_mask {
        d_k[q] = 0.0;
    }

    (d_rho, d_v, d_k)
}

/// The constraint part of the `K̃` gradient, `Σ_i (∂c_i/∂K̃)·ψ_i` (no
/// misfit, no regularizer), with pinned entries zeroed.
pub fn constraint_grad_ktilde(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    duals: &DualPack,
    cfg: &SolverConfig,
) -> Vec<f64> {
    let spec = *state.spec();
    let ws = KernelWorkspace::new(spec);
    let vol = spec.cell_volume();
    let coefs = lagrange_coefs(&spec, duals);
    let mut d_k = vec![0.0; ktilde.values().len()];
    for t in 1..spec.n {
        let cc = ws.cross_correlate(coefs.xi.slice(t), state.rho.slice(t));
        for (q, shifts) in ws.shifts.iter().enumerate() {
            let mut acc = 0.0;
            for &s in shifts {
                acc += cc[s];
            }
            d_k[q] -= vol * acc;
        }
    }
    for &q in &cfg.fixed_mask {
        d_k[q] = 0.0;
    }
    d_k
}

/// One PDHG iteration of the kernel model.
pub fn pdhg_step_kernel(
    state: &mut StaggeredState,
    ktilde: &mut InteractionKernel,
    duals: &mut DualPack,
    metric: &GroundMetricModel,
    obs: &Observation,
    cfg: &SolverConfig,
) -> Result<()> {
    let ws = KernelWorkspace::new(*state.spec());
    pdhg_step_kernel_ws(state, ktilde, duals, metric, obs, cfg, &ws, None)
}

#[allow(clippy::too_many_arguments)]
fn pdhg_step_kernel_ws(
    state: &mut StaggeredState,
    ktilde: &mut InteractionKernel,
    duals: &mut DualPack,
    metric: &GroundMetricModel,
    obs: &Observation,
    cfg: &SolverConfig,
    ws: &KernelWorkspace,
    q_shift: Option<&[f64]>,
) -> Result<()> {
    let (d_rho, d_v, d_k) =
        grad_primal_kernel_ws(state, ktilde, metric, duals, obs, cfg, ws, q_shift);

    let rho_old: Vec<f64> = state.rho.values().to_vec();
    let vel_old: Vec<f64> = state.vel.values().to_vec();
    let k_old: Vec<f64> = ktilde.values().to_vec();

    for (x, g) in state.rho.values_mut().iter_mut().zip(d_rho.values()) {
        *x -= cfg.tau_rho * g;
    }
    if cfg.objective_mode == ObjectiveMode::Kl {
        for x in state.rho.values_mut() {
            if *x < cfg.rho_min {
                *x = cfg.rho_min;
            }
        }
    }
    for (x, g) in state.vel.values_mut().iter_mut().zip(d_v.values()) {
        *x -= cfg.tau_v * g;
    }
    let tau_theta = cfg.tau_theta_effective(state.spec());
    for (x, g) in ktilde.values_mut().iter_mut().zip(&d_k) {
        *x -= tau_theta * g;
    }

    let mut star = state.clone();
    for (s, o) in star.rho.values_mut().iter_mut().zip(&rho_old) {
        *s = 2.0 * *s - o;
    }
    for (s, o) in star.vel.values_mut().iter_mut().zip(&vel_old) {
        *s = 2.0 * *s - o;
    }
    let mut k_star = ktilde.clone();
    for (s, o) in k_star.values_mut().iter_mut().zip(&k_old) {
        *s = 2.0 * *s - o;
    }

    let expanded_star = ws.expand(&k_star);
    let res = residuals(&star, metric, Energy::Interaction(&expanded_star));
    duals.ascend(&res, cfg.sigma);
    Ok(())
}

/// Residuals of the current kernel-model iterate.
pub fn kernel_residuals(
    state: &StaggeredState,
    ktilde: &InteractionKernel,
    metric: &GroundMetricModel,
) -> Residuals {
    let expanded = ktilde.expand();
    residuals(state, metric, Energy::Interaction(&expanded))
}

/// Run the primal-dual iteration for the kernel model (the ground metric
/// is known).
pub fn solve_inverse_kernel(
    obs: &Observation,
    metric: &GroundMetricModel,
    cfg: &SolverConfig,
    init: &InteractionKernel,
    known: &[(usize, f64)],
    truth: Option<&[f64]>,
) -> Result<(InteractionKernel, InverseSolution)> {
    cfg.validate()?;
    let spec = *obs.spec();
    if init.spec() != &spec {
        return Err(Error::GridMismatch { expected: spec, found: *init.spec() });
    }
    let mut cfg = cfg.clone();
    let mut ktilde = init.clone();
    for &(q, value) in known {
        if q >= ktilde.values().len() {
            return Err(Error::InvalidParameter(format!("known entry {q} outside the quotient grid")));
        }
        ktilde.values_mut()[q] = value;
        if !cfg.fixed_mask.contains(&q) {
            cfg.fixed_mask.push(q);
        }
    }

    let mut state = initial_state(obs, &cfg);
    let mut duals = DualPack::zeros(spec);
    let trace =
        run_kernel_loop(obs, metric, &cfg, &mut ktilde, &mut state, &mut duals, None, truth)?;
    let final_theta_err = truth.map(|t| theta_error(ktilde.values(), t));
    Ok((ktilde, InverseSolution { state, duals, trace, final_theta_err }))
}

/// Inner PDHG loop over existing iterates (warm-startable, q-shiftable).
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_kernel_loop(
    obs: &Observation,
    metric: &GroundMetricModel,
    cfg: &SolverConfig,
    ktilde: &mut InteractionKernel,
    state: &mut StaggeredState,
    duals: &mut DualPack,
    q_shift: Option<&[f64]>,
    truth: Option<&[f64]>,
) -> Result<Vec<TraceRow>> {
    let ws = KernelWorkspace::new(*obs.spec());
    let mut trace = Vec::new();

    let record = |iter: usize,
                  state: &StaggeredState,
                  ktilde: &InteractionKernel,
                  trace: &mut Vec<TraceRow>| {
        let (mr, mv) = misfit_terms(state, obs, cfg);
        let reg = kernel_regularizer(ktilde, cfg);
        let expanded = ws.expand(ktilde);
        let res = residuals(state, metric, Energy::Interaction(&expanded)).max_abs();
        trace.push(TraceRow {
            iter,
            obj: mr + mv + reg,
            misfit_rho: mr,
            misfit_v: mv,
            reg,
            residuals: res,
            theta_err: truth.map(|t| theta_error(ktilde.values(), t)),
        });
    };

    record(0, state, ktilde, &mut trace);
    for iter in 0..cfg.iters {
        pdhg_step_kernel_ws(state, ktilde, duals, metric, obs, cfg, &ws, q_shift)?;
        let k = iter + 1;
        if k % cfg.check_every == 0
            && !(state.all_finite()
                && duals.all_finite()
                && ktilde.values().iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite { context: "kernel inverse solve", iter: k });
        }
        if (cfg.trace_every > 0 && k % cfg.trace_every == 0) || k == cfg.iters {
            record(k, state, ktilde, &mut trace);
        }
    }
    Ok(trace)
}
