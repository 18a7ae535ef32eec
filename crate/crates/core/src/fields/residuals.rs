//! The discrete Hamiltonian density `ξ` and the four constraint residuals of
//! the discrete MFG system:
//!
//! 1. HJE on faces, `j = 2..n`:
//!    `(ξ_{i+e_v,j-1/2} - ξ_{i,j-1/2})/dx + (w_{i+e_v/2,j} - w_{i+e_v/2,j-1})/dt`
//! 2. continuity on cells, `j = 1..n`:
//!    `(ρ_{i,j+1/2} - ρ_{i,j-1/2})/dt + Σ_v (m_{i+e_v/2,j} - m_{i-e_v/2,j})/dx`
//! 3. curl matching of `w` per cell (2-D only)
//! 4. zero loop sums of `w` per line per axis per step
//!
//! with `w = G_M v`, `m = ρ v`, and
//! `ξ = ½ (v_{i+e_v/2,j})_v^T G_M (v_{i+e_v/2,j})_v - δF/δρ` where the
//! potential term is `F'(ρ)` for a running cost and `Σ_{i'} K(i,i') ρ_{i'} dx^d`
//! for an interaction kernel. `ξ` uses only positive-direction faces.

use crate::grid::{CellField, FaceField, GridSpec, LineField, TimeLayout};

use super::kernel::ExpandedKernel;
use super::metric::{GroundMetricModel, RunningCostF};
use super::state::StaggeredState;

/// The running-cost term of the energy: either a pointwise density cost or a
/// pairwise interaction kernel.
#[derive(Clone, Copy)]
pub enum Energy<'a> {
    RunningCost(&'a RunningCostF),
    Interaction(&'a ExpandedKernel),
}

impl<'a> Energy<'a> {
    /// `δF/δρ` evaluated on one density slice.
    pub fn potential(&self, rho_slice: &[f64]) -> Vec<f64> {
        match self {
            Energy::RunningCost(f) => rho_slice.iter().map(|&r| f.df(r)).collect(),
            Energy::Interaction(k) => k.convolve(rho_slice),
        }
    }
}

/// `ξ` for the running-cost (metric) energy, as a half-step field.
///
/// Only the interior slices `t = 1..n-1` (1-based steps `j = 2..n`) are defined;
/// slices `0` and `n` are kept zero for uniform indexing against `ρ`.
pub fn xi_metric(state: &StaggeredState, metric: &GroundMetricModel, f: &RunningCostF) -> CellField {
    xi_field(state, metric, Energy::RunningCost(f))
}

/// `ξ` for the interaction (kernel) energy; same layout as [`xi_metric`].
pub fn xi_kernel(state: &StaggeredState, metric: &GroundMetricModel, k: &ExpandedKernel) -> CellField {
    xi_field(state, metric, Energy::Interaction(k))
}

pub fn xi_field(state: &StaggeredState, metric: &GroundMetricModel, energy: Energy) -> CellField {
    let spec = *state.spec();
    let mut xi = CellField::zeros(spec, TimeLayout::HalfStep);
    for t in 1..spec.n {
        let pot = energy.potential(state.rho.slice(t));
        let slice = xi.slice_mut(t);
        for cell in 0..spec.cells() {
            let g = metric.metric_at(cell);
            slice[cell] = 0.5 * g.quad(state.vbundle(t, cell)) - pot[cell];
        }
    }
    xi
}

/// The four residual fields; max-abs summaries are what solvers report.
pub struct Residuals {
    /// HJE residual on faces, steps `s = 0..n-2` (1-based step `j = s + 2`).
    pub hje: FaceField,
    /// Continuity residual on cells, integer steps.
    pub cont: CellField,
    /// Curl-mismatch residual (2-D only).
    pub curl: Option<CellField>,
    /// Loop sums of `w` per axis/line/step.
    pub loop_sums: LineField,
}

impl Residuals {
    pub fn max_abs(&self) -> ResidualNorms {
        ResidualNorms {
            hje: self.hje.max_abs(),
            cont: self.cont.max_abs(),
            curl: self.curl.as_ref().map(|c| c.max_abs()).unwrap_or(0.0),
            loop_sums: self.loop_sums.max_abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualNorms {
    pub hje: f64,
    pub cont: f64,
    pub curl: f64,
    pub loop_sums: f64,
}

impl ResidualNorms {
    pub fn overall(&self) -> f64 {
        self.hje.max(self.cont).max(self.curl).max(self.loop_sums)
    }
}

/// Evaluate all four residuals of the state against the given energy model.
pub fn residuals(state: &StaggeredState, metric: &GroundMetricModel, energy: Energy) -> Residuals {
    let spec = *state.spec();
    let xi = xi_field(state, metric, energy);
    let w = state.w(metric);
    let flux = state.flux();
    Residuals {
        hje: hje_residual(&spec, &xi, &w),
        cont: continuity_residual(&spec, &state.rho, &flux),
        curl: curl_residual(&spec, &w),
        loop_sums: loop_sums(&spec, &w),
    }
}

pub fn hje_residual(spec: &GridSpec, xi: &CellField, w: &FaceField) -> FaceField {
    let dx = spec.dx();
    let dt = spec.dt();
    let mut out = FaceField::zeros_with_steps(*spec, spec.n - 1);
    for axis in 0..spec.dim {
        for s in 0..spec.n - 1 {
            let xs = xi.slice(s + 1);
            let w_new = w.slice(axis, s + 1);
            let w_old = w.slice(axis, s);
            let slice = out.slice_mut(axis, s);
            for cell in 0..spec.cells() {
                slice[cell] = (xs[spec.fwd(cell, axis)] - xs[cell]) / dx
                    + (w_new[cell] - w_old[cell]) / dt;
            }
        }
    }
    out
}

pub fn continuity_residual(spec: &GridSpec, rho: &CellField, flux: &FaceField) -> CellField {
    let dx = spec.dx();
    let dt = spec.dt();
    let mut out = CellField::zeros(*spec, TimeLayout::IntStep);
    for t in 0..spec.n {
        let r_old = rho.slice(t);
        let r_new = rho.slice(t + 1);
        let slice = out.slice_mut(t);
        for cell in 0..spec.cells() {
            slice[cell] = (r_new[cell] - r_old[cell]) / dt;
        }
        for axis in 0..spec.dim {
            let f = flux.slice(axis, t);
            for cell in 0..spec.cells() {
                slice[cell] += (f[cell] - f[spec.bwd(cell, axis)]) / dx;
            }
        }
    }
    out
}

pub fn curl_residual(spec: &GridSpec, w: &FaceField) -> Option<CellField> {
    if spec.dim == 1 {
        return None;
    }
    let dx = spec.dx();
    let mut out = CellField::zeros(*spec, TimeLayout::IntStep);
    for t in 0..spec.n {
        let wx = w.slice(0, t);
        let wy = w.slice(1, t);
        let slice = out.slice_mut(t);
        for cell in 0..spec.cells() {
            slice[cell] = (wx[spec.fwd(cell, 1)] - wx[cell] - wy[spec.fwd(cell, 0)] + wy[cell]) / dx;
        }
    }
    Some(out)
}

pub fn loop_sums(spec: &GridSpec, w: &FaceField) -> LineField {
    let mut out = LineField::zeros(*spec);
    for axis in 0..spec.dim {
        for t in 0..spec.n {
            let ws = w.slice(axis, t);
            for cell in 0..spec.cells() {
                out.add(axis, spec.line_of(cell, axis), t, ws[cell]);
            }
        }
    }
    out
}
