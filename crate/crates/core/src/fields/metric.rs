//! Ground metric model: a scalar metric kernel `g0` per cell plus fixed
//! entry maps `f_ij` producing the symmetric matrix `G_M = (f_ij(g0))`.
//!
//! In 1-D the model degenerates to the scalar `G_M = g0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellField, GridSpec, TimeLayout};

/// Symmetric 2x2 matrix (only `xx` is meaningful in 1-D).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub fn scalar(g: f64) -> Self {
        SymMat2 { xx: g, xy: 0.0, yy: 0.0 }
    }

    #[inline]
    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// Quadratic form `v^T G v`.
    #[inline]
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn is_spd(&self, dim: usize) -> bool {
        if dim == 1 {
            self.xx > 0.0
        } else {
            self.xx > 0.0 && self.xx * self.yy - self.xy * self.xy > 0.0
        }
    }
}

/// The fixed entry maps `f_ij` (and their derivatives) of the metric model.
///
/// Shipped presets:
/// - `Scalar`: 1-D, `G_M = g0`.
/// - `Identity`: `G_M = I` independent of `g0` (known-metric runs).
/// - `LinearTest51`: the 2-D linear family
///   `[[g0+4, g0+2], [g0+2, 2*g0+1]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryMaps {
    Scalar,
    Identity,
    LinearTest51,
}

impl EntryMaps {
    pub fn name(&self) -> &'static str {
        match self {
            EntryMaps::Scalar => "scalar",
            EntryMaps::Identity => "identity",
            EntryMaps::LinearTest51 => "linear-test51",
        }
    }

    pub fn from_name(name: &str) -> Option<EntryMaps> {
        match name {
            "scalar" => Some(EntryMaps::Scalar),
            "identity" => Some(EntryMaps::Identity),
            "linear-test51" => Some(EntryMaps::LinearTest51),
            _ => None,
        }
    }

    /// Entry values `(f_11, f_12, f_22)(g0)`.
    #[inline]
    pub fn eval(&self, g0: f64, dim: usize) -> SymMat2 {
        match self {
            EntryMaps::Scalar => SymMat2::scalar(g0),
            EntryMaps::Identity => {
                if dim == 1 {
                    SymMat2::scalar(1.0)
                } else {
                    SymMat2 { xx: 1.0, xy: 0.0, yy: 1.0 }
                }
            }
            EntryMaps::LinearTest51 => SymMat2 { xx: g0 + 4.0, xy: g0 + 2.0, yy: 2.0 * g0 + 1.0 },
        }
    }

    /// Entry derivatives `(f'_11, f'_12, f'_22)(g0)`.
    #[inline]
    pub fn deriv(&self, _g0: f64, dim: usize) -> SymMat2 {
        match self {
            EntryMaps::Scalar => SymMat2::scalar(1.0),
            EntryMaps::Identity => {
                let _ = dim;
                SymMat2 { xx: 0.0, xy: 0.0, yy: 0.0 }
            }
            EntryMaps::LinearTest51 => SymMat2 { xx: 1.0, xy: 1.0, yy: 2.0 },
        }
    }

    pub fn valid_for_dim(&self, dim: usize) -> bool {
        match self {
            EntryMaps::Scalar => dim == 1,
            EntryMaps::Identity => true,
            EntryMaps::LinearTest51 => dim == 2,
        }
    }
}

/// Per-cell scalar metric kernel plus the entry maps.
#[derive(Clone, Debug)]
pub struct GroundMetricModel {
    g0: CellField,
    maps: EntryMaps,
}

impl GroundMetricModel {
    pub fn new(g0: CellField, maps: EntryMaps) -> Result<Self> {
        if g0.layout() != TimeLayout::Static {
            return Err(Error::LayoutMismatch { expected: "cell-static", found: g0.layout().name() });
        }
        if !maps.valid_for_dim(g0.spec().dim) {
            return Err(Error::InvalidParameter(format!(
                "entry maps '{}' not defined for dim {}",
                maps.name(),
                g0.spec().dim
            )));
        }
        Ok(GroundMetricModel { g0, maps })
    }

    /// Constant `g0 = c` model.
    pub fn constant(spec: GridSpec, maps: EntryMaps, c: f64) -> Result<Self> {
        Self::new(CellField::constant(spec, TimeLayout::Static, c), maps)
    }

    /// Sample `g0` from an analytic function of the cell position.
    pub fn from_fn(spec: GridSpec, maps: EntryMaps, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let g0 = CellField::from_fn(spec, TimeLayout::Static, |_, cell| f(spec.cell_position(cell)));
        Self::new(g0, maps)
    }

    pub fn spec(&self) -> &GridSpec {
        self.g0.spec()
    }

    pub fn maps(&self) -> EntryMaps {
        self.maps
    }

    pub fn g0(&self) -> &[f64] {
        self.g0.slice(0)
    }

    pub fn g0_mut(&mut self) -> &mut [f64] {
        self.g0.slice_mut(0)
    }

    pub fn g0_field(&self) -> &CellField {
        &self.g0
    }

    /// Evaluate `G_M` at a cell; symmetric by construction.
    #[inline]
    pub fn metric_at(&self, cell: usize) -> SymMat2 {
        self.maps.eval(self.g0.at(0, cell), self.spec().dim)
    }

    /// Entry-map derivative matrix `(f'_ij(g0_i))` at a cell.
    #[inline]
    pub fn metric_deriv_at(&self, cell: usize) -> SymMat2 {
        self.maps.deriv(self.g0.at(0, cell), self.spec().dim)
    }

    /// Check positive definiteness at every cell; required by any operation
    /// that divides by or inverts the metric.
    pub fn validate_spd(&self) -> Result<()> {
        let dim = self.spec().dim;
        for cell in 0..self.spec().cells() {
            if !self.metric_at(cell).is_spd(dim) {
                return Err(Error::NotSpd { cell });
            }
        }
        Ok(())
    }

    /// Replace `g0` values (layout preserved).
    pub fn set_g0(&mut self, values: &[f64]) {
        self.g0.slice_mut(0).copy_from_slice(values);
    }
}

/// Scalar running cost `F(ρ)` with first and second derivatives.
///
/// The shipped instance is the quadratic `F(ρ) = ρ²/2` (convex on `ρ >= 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunningCostF {
    /// `F(ρ) = c·ρ²/2`
    Quadratic { coeff: f64 },
    /// `F = 0` (pure optimal transport)
    Zero,
}

impl RunningCostF {
    pub fn quadratic() -> Self {
        RunningCostF::Quadratic { coeff: 1.0 }
    }

    #[inline]
    pub fn f(&self, rho: f64) -> f64 {
        match self {
            RunningCostF::Quadratic { coeff } => 0.5 * coeff * rho * rho,
            RunningCostF::Zero => 0.0,
        }
    }

    #[inline]
    pub fn df(&self, rho: f64) -> f64 {
        match self {
            RunningCostF::Quadratic { coeff } => coeff * rho,
            RunningCostF::Zero => 0.0,
        }
    }

    #[inline]
    pub fn d2f(&self, _rho: f64) -> f64 {
        match self {
            RunningCostF::Quadratic { coeff } => *coeff,
            RunningCostF::Zero => 0.0,
        }
    }
}
