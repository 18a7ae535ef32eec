//! Inverse solver for the ground-metric kernel `g0`.
//!
//! Minimizes the data misfit plus the periodic `H^p` regularizer of `g0`
//! subject to the four discrete constraints, with the running cost `F`
//! known. The primal gradients are the explicit forms obtained by
//! rearranging the constraint pairings so every sum is local:
//!
//! - `ρ` couples to `Φ` through time/space differences and to `ψ` through
//!   `F''(ρ)`;
//! - `v` couples to everything through `m = ρ v`, `w = G_M v` and the
//!   kinetic part of `ξ`;
//! - `g0` sees the same `w`/`ξ` pairings with `G_M` replaced by the entry-map
//!   derivative matrix `(f'_ij(g0))`, plus the regularizer subgradient.

use crate::error::{Error, Result};
use crate::fields::{
    residuals, Energy, GroundMetricModel, Residuals, RunningCostF, StaggeredState,
};
use crate::grid::{CellField, FaceField};

use super::{
    abspow, constraint_pairing, initial_state, lagrange_coefs, misfit_rho_grad, misfit_terms,
    sgnpow, theta_error, DualPack, InverseSolution, Observation, ObjectiveMode, SolverConfig,
    TraceRow,
};

/// Inverse objective of the metric model (misfits plus the periodic `H^p`
/// regularizer of `g0`).
pub fn inverse_objective(
    state: &StaggeredState,
    model: &GroundMetricModel,
    obs: &Observation,
    cfg: &SolverConfig,
) -> f64 {
    let (mr, mv) = misfit_terms(state, obs, cfg);
    mr + mv + metric_regularizer(model, cfg)
}

/// `Σ_i Σ_v γ/(p·dt) |(g0_{i+e_v} - g0_i)/dx|^p` over the periodic grid.
pub fn metric_regularizer(model: &GroundMetricModel, cfg: &SolverConfig) -> f64 {
    let spec = *model.spec();
    let g0 = model.g0();
    let (dx, dt) = (spec.dx(), spec.dt());
    let mut acc = 0.0;
    for axis in 0..spec.dim {
        for cell in 0..spec.cells() {
            acc += abspow((g0[spec.fwd(cell, axis)] - g0[cell]) / dx, cfg.p);
        }
    }
    acc * cfg.gamma / (cfg.p as f64 * dt)
}

/// Subgradient of [`metric_regularizer`] at one cell
/// (`sign(0) = 0`, so flat regions are stationary).
fn metric_reg_subgrad(model: &GroundMetricModel, cfg: &SolverConfig, cell: usize) -> f64 {
    let spec = *model.spec();
    let g0 = model.g0();
    let (dx, dt) = (spec.dx(), spec.dt());
    let scale = cfg.gamma / (dt * dx.powi(cfg.p as i32));
    let mut acc = 0.0;
    for axis in 0..spec.dim {
        acc += sgnpow(g0[cell] - g0[spec.bwd(cell, axis)], cfg.p);
        acc += sgnpow(g0[cell] - g0[spec.fwd(cell, axis)], cfg.p);
    }
    scale * acc
}

/// Lagrangian of the metric inverse model: objective plus the duality
/// pairing with the four constraint residuals.
pub fn lagrangian_metric(
    state: &StaggeredState,
    model: &GroundMetricModel,
    f: &RunningCostF,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
) -> f64 {
    let res = residuals(state, model, Energy::RunningCost(f));
    inverse_objective(state, model, obs, cfg) + constraint_pairing(state.spec(), duals, &res)
}

/// Explicit primal gradients `(d_ρ, d_v, d_g0)` of [`lagrangian_metric`].
///
/// Entries of `d_g0` listed in `cfg.fixed_mask` are zeroed.
pub fn grad_primal_metric(
    state: &StaggeredState,
    model: &GroundMetricModel,
    f: &RunningCostF,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
) -> (CellField, FaceField, Vec<f64>) {
    grad_primal_metric_shifted(state, model, f, duals, obs, cfg, None)
}

/// Gradients with an optional Bregman shift: `d_g0` gains `-q`.
pub(crate) fn grad_primal_metric_shifted(
    state: &StaggeredState,
    model: &GroundMetricModel,
    f: &RunningCostF,
    duals: &DualPack,
    obs: &Observation,
    cfg: &SolverConfig,
    q_shift: Option<&[f64]>,
) -> (CellField, FaceField, Vec<f64>) {
    let spec = *state.spec();
    let cells = spec.cells();
    let n = spec.n;
    let (dx, dt) = (spec.dx(), spec.dt());
    let coefs = lagrange_coefs(&spec, duals);

    // d_rho
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
            let cxi = coefs.xi.slice(t);
            for cell in 0..cells {
                let mut g = misfit_rho_grad(cfg, dt, t, n, rs[cell], rhs[cell])
                    + (p_prev[cell] - p_cur[cell]) / dt;
                for axis in 0..spec.dim {
                    g += (p_cur[cell] - p_cur[spec.fwd(cell, axis)]) / dx
                        * state.vel.at(axis, t, cell);
                }
                // ξ carries -F'(ρ): the ψ pairing contributes -c_ξ·F''.
                g -= cxi[cell] * f.d2f(rs[cell]);
                slice[cell] = g;
            }
        }
    }

    // d_v and d_g0 share the w/ξ coefficients.
    let mut d_v = FaceField::zeros(spec);
    let mut d_g0 = vec![0.0; cells];
    for t in 0..n {
        let rs = state.rho.slice(t);
        let p = duals.phi.slice(t);
        let cxi = coefs.xi.slice(t); // zero slice at t = 0
        let rh = obs.rho_hat.slice(t);
        for cell in 0..cells {
            let g = model.metric_at(cell);
            let gp = model.metric_deriv_at(cell);
            let vb = state.vbundle(t, cell);
            let cw = [
                coefs.w.at(0, t, cell),
                if spec.dim == 2 { coefs.w.at(1, t, cell) } else { 0.0 },
            ];
            let gcw = g.mul_vec(cw);
            let gv = g.mul_vec(vb);
            let gpv = gp.mul_vec(vb);
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
            // g0 sees the same pairings through f'_ij.
            let mut dg = cw[0] * gpv[0] + cw[1] * gpv[1];
            if t >= 1 {
                dg += cxi[cell] * 0.5 * gp.quad(vb);
            }
            d_g0[cell] += dg;
        }
    }
    for cell in 0..cells {
        d_g0[cell] += metric_reg_subgrad(model, cfg, cell);
    }
    if let Some(q) = q_shift {
        for (g, qi) in d_g0.iter_mut().zip(q) {
            *g -= qi;
        }
    }
    for &cell in &cfg.fixed_mask {
        d_g0[cell] = 0.0;
    }

    (d_rho, d_v, d_g0)
}

/// The constraint part of the `g0` gradient, `Σ_i (∂c_i/∂g0)·ψ_i` (no
/// misfit, no regularizer), with pinned entries zeroed. This is what the
/// Bregman subgradient update subtracts.
pub fn constraint_grad_g0(
    state: &StaggeredState,
    model: &GroundMetricModel,
    duals: &DualPack,
    cfg: &SolverConfig,
) -> Vec<f64> {
    let spec = *state.spec();
    let coefs = lagrange_coefs(&spec, duals);
    let mut d_g0 = vec![0.0; spec.cells()];
    for t in 0..spec.n {
        let cxi = coefs.xi.slice(t);
        for cell in 0..spec.cells() {
            let gp = model.metric_deriv_at(cell);
            let vb = state.vbundle(t, cell);
            let cw = [
                coefs.w.at(0, t, cell),
                if spec.dim == 2 { coefs.w.at(1, t, cell) } else { 0.0 },
            ];
            let gpv = gp.mul_vec(vb);
            let mut dg = cw[0] * gpv[0] + cw[1] * gpv[1];
            if t >= 1 {
                dg += cxi[cell] * 0.5 * gp.quad(vb);
            }
            d_g0[cell] += dg;
        }
    }
    for &cell in &cfg.fixed_mask {
        d_g0[cell] = 0.0;
    }
    d_g0
}

/// One PDHG iteration: primal descent, `2x^{ k+1} - x^k` extrapolation, dual
/// ascent on the constraint residuals of the starred primals.
pub fn pdhg_step(
    state: &mut StaggeredState,
    model: &mut GroundMetricModel,
    duals: &mut DualPack,
    f: &RunningCostF,
    obs: &Observation,
    cfg: &SolverConfig,
) -> Result<()> {
    pdhg_step_shifted(state, model, duals, f, obs, cfg, None)
}

pub(crate) fn pdhg_step_shifted(
    state: &mut StaggeredState,
    model: &mut GroundMetricModel,
    duals: &mut DualPack,
    f: &RunningCostF,
    obs: &Observation,
    cfg: &SolverConfig,
    q_shift: Option<&[f64]>,
) -> Result<()> {
    let (d_rho, d_v, d_g0) = grad_primal_metric_shifted(state, model, f, duals, obs, cfg, q_shift);

    let rho_old: Vec<f64> = state.rho.values().to_vec();
    let vel_old: Vec<f64> = state.vel.values().to_vec();
    let g0_old: Vec<f64> = model.g0().to_vec();

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
    for (x, g) in model.g0_mut().iter_mut().zip(&d_g0) {
        *x -= tau_theta * g;
    }

    // Starred primals and the induced starred metric.
    let mut star = state.clone();
    for (s, o) in star.rho.values_mut().iter_mut().zip(&rho_old) {
        *s = 2.0 * *s - o;
    }
    for (s, o) in star.vel.values_mut().iter_mut().zip(&vel_old) {
        *s = 2.0 * *s - o;
    }
    let mut model_star = model.clone();
    for (s, o) in model_star.g0_mut().iter_mut().zip(&g0_old) {
        *s = 2.0 * *s - o;
    }

    let res = residuals(&star, &model_star, Energy::RunningCost(f));
    duals.ascend(&res, cfg.sigma);
    Ok(())
}

/// Residuals of the current iterate for trace reporting.
pub fn metric_residuals(
    state: &StaggeredState,
    model: &GroundMetricModel,
    f: &RunningCostF,
) -> Residuals {
    residuals(state, model, Energy::RunningCost(f))
}

/// Run the primal-dual iteration for the metric model.
///
/// Starts from `ρ` = mean observed value (boundary slices copied from the
/// observation), `v = 0`, `g0 = init` with `known` entries pinned; `truth`
/// (when provided) only feeds the error column of the trace.
pub fn solve_inverse_metric(
    obs: &Observation,
    f: &RunningCostF,
    cfg: &SolverConfig,
    init: &GroundMetricModel,
    known: &[(usize, f64)],
    truth: Option<&[f64]>,
) -> Result<(GroundMetricModel, InverseSolution)> {
    cfg.validate()?;
    let spec = *obs.spec();
    if init.spec() != &spec {
        return Err(Error::GridMismatch { expected: spec, found: *init.spec() });
    }
    let mut cfg = cfg.clone();
    let mut model = init.clone();
    for &(cell, value) in known {
        if cell >= spec.cells() {
            return Err(Error::InvalidParameter(format!("known entry {cell} outside the grid")));
        }
        model.g0_mut()[cell] = value;
        if !cfg.fixed_mask.contains(&cell) {
            cfg.fixed_mask.push(cell);
        }
    }

    let mut state = initial_state(obs, &cfg);
    let mut duals = DualPack::zeros(spec);
    let trace =
        run_metric_loop(obs, f, &cfg, &mut model, &mut state, &mut duals, None, truth)?;
    let final_theta_err = truth.map(|t| theta_error(model.g0(), t));
    Ok((model, InverseSolution { state, duals, trace, final_theta_err }))
}

/// Inner PDHG loop over existing iterates (used directly by the Bregman
/// driver for warm-started, q-shifted solves).
pub(crate) fn run_metric_loop(
    obs: &Observation,
    f: &RunningCostF,
    cfg: &SolverConfig,
    model: &mut GroundMetricModel,
    state: &mut StaggeredState,
    duals: &mut DualPack,
    q_shift: Option<&[f64]>,
    truth: Option<&[f64]>,
) -> Result<Vec<TraceRow>> {
    let mut trace = Vec::new();
    let record = |iter: usize,
                  state: &StaggeredState,
                  model: &GroundMetricModel,
                  trace: &mut Vec<TraceRow>| {
        let (mr, mv) = misfit_terms(state, obs, cfg);
        let reg = metric_regularizer(model, cfg);
        let res = metric_residuals(state, model, f).max_abs();
        trace.push(TraceRow {
            iter,
            obj: mr + mv + reg,
            misfit_rho: mr,
            misfit_v: mv,
            reg,
            residuals: res,
            theta_err: truth.map(|t| theta_error(model.g0(), t)),
        });
    };

    record(0, state, model, &mut trace);
    for iter in 0..cfg.iters {
        pdhg_step_shifted(state, model, duals, f, obs, cfg, q_shift)?;
        let k = iter + 1;
        if k % cfg.check_every == 0
            && !(state.all_finite() && duals.all_finite() && model.g0().iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite { context: "metric inverse solve", iter: k });
        }
        if (cfg.trace_every > 0 && k % cfg.trace_every == 0) || k == cfg.iters {
            record(k, state, model, &mut trace);
        }
    }
    Ok(trace)
}
