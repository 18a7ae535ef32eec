//! The staggered primal state: density on time half-steps plus face
//! velocities, with flux `m = ρ v` and `w = G_M v` always derived on demand
//! (never stored, so they cannot go stale).

use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField, GridSpec, TimeLayout};

use super::metric::GroundMetricModel;

/// Default floor used wherever a solver divides by the density.
pub const RHO_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct StaggeredState {
    pub rho: CellField,
    pub vel: FaceField,
}

impl StaggeredState {
    pub fn new(rho: CellField, vel: FaceField) -> Result<Self> {
        if rho.layout() != TimeLayout::HalfStep {
            return Err(Error::LayoutMismatch { expected: "cell-half", found: rho.layout().name() });
        }
        if rho.spec() != vel.spec() || vel.steps() != rho.spec().n {
            return Err(Error::InvalidParameter("state fields disagree on the grid spec".into()));
        }
        Ok(StaggeredState { rho, vel })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        StaggeredState {
            rho: CellField::zeros(spec, TimeLayout::HalfStep),
            vel: FaceField::zeros(spec),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.rho.spec()
    }

    /// Velocity bundle `(v_{i+e_v/2,j})_v` at cell `i`, time slice `t`
    /// (positive-direction faces only; second component 0 in 1-D).
    #[inline]
    pub fn vbundle(&self, t: usize, cell: usize) -> [f64; 2] {
        if self.spec().dim == 1 {
            [self.vel.at(0, t, cell), 0.0]
        } else {
            [self.vel.at(0, t, cell), self.vel.at(1, t, cell)]
        }
    }

    /// Flux `m = ρ v`, recomputed from the current state.
    ///
    /// Face `(i + e_v/2, j)` pairs with the cell density `ρ_{i, j-1/2}`
    /// (same cell, no averaging).
    pub fn flux(&self) -> FaceField {
        let spec = *self.spec();
        FaceField::from_fn(spec, |axis, t, cell| self.rho.at(t, cell) * self.vel.at(axis, t, cell))
    }

    /// `w = G_M v`, recomputed from the current state.
    pub fn w(&self, metric: &GroundMetricModel) -> FaceField {
        let spec = *self.spec();
        let mut out = FaceField::zeros(spec);
        for t in 0..spec.n {
            for cell in 0..spec.cells() {
                let g = metric.metric_at(cell);
                let wb = g.mul_vec(self.vbundle(t, cell));
                out.set(0, t, cell, wb[0]);
                if spec.dim == 2 {
                    out.set(1, t, cell, wb[1]);
                }
            }
        }
        out
    }

    /// Velocity from a flux field: `v = m / max(ρ, floor)`.
    pub fn from_flux(rho: CellField, flux: &FaceField, floor: f64) -> Result<Self> {
        let spec = *rho.spec();
        let vel = FaceField::from_fn(spec, |axis, t, cell| {
            flux.at(axis, t, cell) / rho.at(t, cell).max(floor)
        });
        StaggeredState::new(rho, vel)
    }

    /// Total mass `Σ_i ρ_{i,t} · dx^d` of a half-step slice.
    pub fn slice_mass(&self, t: usize) -> f64 {
        self.rho.slice(t).iter().sum::<f64>() * self.spec().cell_volume()
    }

    pub fn all_finite(&self) -> bool {
        self.rho.all_finite() && self.vel.all_finite()
    }
}
