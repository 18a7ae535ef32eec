//! Periodic grid geometry, staggered field storage, and the elementary
//! discrete difference operators.
//!
//! The spatial domain is the unit torus discretized into `m` cells per axis
//! (`dim` = 1 or 2), the time interval `[0, T]` into `n` steps. Densities live
//! on time half-steps (`n + 1` slices), velocities/fluxes on faces
//! `(i + e_v/2, j)` at integer time steps, and multipliers on integer steps.
//! Spatial indices always wrap modulo `m`; time indices never wrap.
//!
//! Internally everything is 0-based: cell `(i1, i2)` flattens to `i1*m + i2`,
//! density slice `t` holds the half-step value at time `(t + 1/2)·dt`, and a
//! face/velocity slice `t` corresponds to the integer time step `t + 1`
//! (1-based) of the staggered scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the space-time grid on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    /// Cells per spatial axis.
    pub m: usize,
    /// Time steps.
    pub n: usize,
    /// Time horizon T.
    pub horizon: f64,
}

impl GridSpec {
    pub fn new(dim: usize, m: usize, n: usize, horizon: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidParameter(format!("dim must be 1 or 2, got {dim}")));
        }
        if m < 2 || n < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs m >= 2 and n >= 2, got m={m}, n={n}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(GridSpec { dim, m, n, horizon })
    }

    /// Cell width, exactly `1/m` (torus units).
    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Time step, exactly `T/n`.
    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// Number of cells, `m^dim`.
    #[inline]
    pub fn cells(&self) -> usize {
        if self.dim == 1 { self.m } else { self.m * self.m }
    }

    /// Cell volume `dx^dim`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Number of loop-constraint lines per axis: `m^(dim-1)`.
    #[inline]
    pub fn lines(&self) -> usize {
        if self.dim == 1 { 1 } else { self.m }
    }

    /// Reduce a (possibly negative) multi-index into `V` and flatten it.
    pub fn wrap(&self, idx: &[i64]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        let m = self.m as i64;
        let mut flat = 0usize;
        for &c in idx {
            let r = c.rem_euclid(m) as usize;
            flat = flat * self.m + r;
        }
        flat
    }

    /// Multi-index of a flat cell id (second component unused in 1-D).
    #[inline]
    pub fn coords(&self, cell: usize) -> [usize; 2] {
        if self.dim == 1 { [cell, 0] } else { [cell / self.m, cell % self.m] }
    }

    /// Neighbor cell `i + e_axis` with periodic wrap.
    #[inline]
    pub fn fwd(&self, cell: usize, axis: usize) -> usize {
        if self.dim == 1 {
            let next = cell + 1;
            if next == self.m { 0 } else { next }
        } else if axis == 0 {
            let next = cell + self.m;
            if next >= self.cells() { next - self.cells() } else { next }
        } else {
            let i2 = cell % self.m;
            if i2 + 1 == self.m { cell + 1 - self.m } else { cell + 1 }
        }
    }

    /// Neighbor cell `i - e_axis` with periodic wrap.
    #[inline]
    pub fn bwd(&self, cell: usize, axis: usize) -> usize {
        if self.dim == 1 {
            if cell == 0 { self.m - 1 } else { cell - 1 }
        } else if axis == 0 {
            if cell < self.m { cell + self.cells() - self.m } else { cell - self.m }
        } else {
            let i2 = cell % self.m;
            if i2 == 0 { cell + self.m - 1 } else { cell - 1 }
        }
    }

    /// Index of the loop-constraint line through `cell` transverse to `axis`.
    ///
    /// Axis-0 loops run over `i1` at fixed `i2`, axis-1 loops over `i2` at
    /// fixed `i1`; in 1-D there is a single line per time step.
    #[inline]
    pub fn line_of(&self, cell: usize, axis: usize) -> usize {
        if self.dim == 1 {
            0
        } else if axis == 0 {
            cell % self.m
        } else {
            cell / self.m
        }
    }

    /// Spatial coordinates of the cell center used when sampling analytic
    /// truth functions: `x_i = i·dx` per axis.
    pub fn cell_position(&self, cell: usize) -> [f64; 2] {
        let c = self.coords(cell);
        [c[0] as f64 * self.dx(), c[1] as f64 * self.dx()]
    }
}

/// Time layout of a cell-centered field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeLayout {
    /// Half steps `j - 1/2`, `j = 1..n+1` (`n + 1` slices). Houses densities.
    HalfStep,
    /// Integer steps `j = 1..n` (`n` slices). Houses multipliers.
    IntStep,
    /// Time-independent (one slice). Houses the metric kernel `g0`.
    Static,
}

impl TimeLayout {
    pub fn slices(&self, spec: &GridSpec) -> usize {
        match self {
            TimeLayout::HalfStep => spec.n + 1,
            TimeLayout::IntStep => spec.n,
            TimeLayout::Static => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeLayout::HalfStep => "cell-half",
            TimeLayout::IntStep => "cell-int",
            TimeLayout::Static => "cell-static",
        }
    }

    pub fn from_name(name: &str) -> Option<TimeLayout> {
        match name {
            "cell-half" => Some(TimeLayout::HalfStep),
            "cell-int" => Some(TimeLayout::IntStep),
            "cell-static" => Some(TimeLayout::Static),
            _ => None,
        }
    }
}

/// Cell-centered scalar field with a declared time layout.
///
/// The layout is immutable after creation; slices are contiguous `cells()`
/// blocks in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    spec: GridSpec,
    layout: TimeLayout,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(spec: GridSpec, layout: TimeLayout) -> Self {
        let len = layout.slices(&spec) * spec.cells();
        CellField { spec, layout, data: vec![0.0; len] }
    }

    pub fn constant(spec: GridSpec, layout: TimeLayout, value: f64) -> Self {
        let len = layout.slices(&spec) * spec.cells();
        CellField { spec, layout, data: vec![value; len] }
    }

    /// Build from `f(t, cell)`.
    pub fn from_fn(spec: GridSpec, layout: TimeLayout, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let slices = layout.slices(&spec);
        let cells = spec.cells();
        let mut data = Vec::with_capacity(slices * cells);
        for t in 0..slices {
            for cell in 0..cells {
                data.push(f(t, cell));
            }
        }
        CellField { spec, layout, data }
    }

    pub fn from_values(spec: GridSpec, layout: TimeLayout, data: Vec<f64>) -> Result<Self> {
        let expect = layout.slices(&spec) * spec.cells();
        if data.len() != expect {
            return Err(Error::InvalidParameter(format!(
                "cell field needs {expect} values for layout {}, got {}",
                layout.name(),
                data.len()
            )));
        }
        Ok(CellField { spec, layout, data })
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn layout(&self) -> TimeLayout {
        self.layout
    }

    #[inline]
    pub fn slices(&self) -> usize {
        self.layout.slices(&self.spec)
    }

    #[inline]
    pub fn slice(&self, t: usize) -> &[f64] {
        let cells = self.spec.cells();
        &self.data[t * cells..(t + 1) * cells]
    }

    #[inline]
    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        let cells = self.spec.cells();
        &mut self.data[t * cells..(t + 1) * cells]
    }

    #[inline]
    pub fn at(&self, t: usize, cell: usize) -> f64 {
        self.data[t * self.spec.cells() + cell]
    }

    #[inline]
    pub fn set(&mut self, t: usize, cell: usize, value: f64) {
        self.data[t * self.spec.cells() + cell] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Face-centered field: one value per face `(i + e_v/2)` per axis per time
/// step. Stores `dim · m^dim · steps` values, axis-major then time-major.
///
/// The canonical staggered fields (velocity, flux, `w`) use `steps = n`; the
/// HJE multiplier `ψ` lives on `j = 2..n` and uses `steps = n - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    spec: GridSpec,
    steps: usize,
    data: Vec<f64>,
}

impl FaceField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::zeros_with_steps(spec, spec.n)
    }

    pub fn zeros_with_steps(spec: GridSpec, steps: usize) -> Self {
        let len = spec.dim * steps * spec.cells();
        FaceField { spec, steps, data: vec![0.0; len] }
    }

    /// Build from `f(axis, t, cell)` over the canonical `n` steps.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let cells = spec.cells();
        let mut data = Vec::with_capacity(spec.dim * spec.n * cells);
        for axis in 0..spec.dim {
            for t in 0..spec.n {
                for cell in 0..cells {
                    data.push(f(axis, t, cell));
                }
            }
        }
        FaceField { spec, steps: spec.n, data }
    }

    pub fn from_values(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        let expect = spec.dim * spec.n * spec.cells();
        if data.len() != expect {
            return Err(Error::InvalidParameter(format!(
                "face field needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(FaceField { spec, steps: spec.n, data })
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    fn offset(&self, axis: usize, t: usize) -> usize {
        (axis * self.steps + t) * self.spec.cells()
    }

    #[inline]
    pub fn slice(&self, axis: usize, t: usize) -> &[f64] {
        let o = self.offset(axis, t);
        &self.data[o..o + self.spec.cells()]
    }

    #[inline]
    pub fn slice_mut(&mut self, axis: usize, t: usize) -> &mut [f64] {
        let o = self.offset(axis, t);
        let cells = self.spec.cells();
        &mut self.data[o..o + cells]
    }

    #[inline]
    pub fn at(&self, axis: usize, t: usize, cell: usize) -> f64 {
        self.data[self.offset(axis, t) + cell]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, t: usize, cell: usize, value: f64) {
        let o = self.offset(axis, t);
        self.data[o + cell] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-line multipliers / loop sums: one value per axis per line per time
/// step (`Θ_x(i2, j)`, `Θ_y(i1, j)`; a single line per step in 1-D).
#[derive(Clone, Debug, PartialEq)]
pub struct LineField {
    spec: GridSpec,
    data: Vec<f64>,
}

impl LineField {
    pub fn zeros(spec: GridSpec) -> Self {
        let len = spec.dim * spec.lines() * spec.n;
        LineField { spec, data: vec![0.0; len] }
    }

    #[inline]
    fn offset(&self, axis: usize, line: usize, t: usize) -> usize {
        (axis * self.spec.lines() + line) * self.spec.n + t
    }

    #[inline]
    pub fn at(&self, axis: usize, line: usize, t: usize) -> f64 {
        self.data[self.offset(axis, line, t)]
    }

    #[inline]
    pub fn add(&mut self, axis: usize, line: usize, t: usize, value: f64) {
        let o = self.offset(axis, line, t);
        self.data[o] += value;
    }

    #[inline]
    pub fn set(&mut self, axis: usize, line: usize, t: usize, value: f64) {
        let o = self.offset(axis, line, t);
        self.data[o] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }
}

/// Spatial forward difference `(f_{i+e_axis} - f_i)/dx` of one time slice,
/// with periodic wrap; the result lives on the faces `(i + e_axis/2)`.
pub fn space_diff(f: &CellField, axis: usize, t: usize) -> Result<Vec<f64>> {
    let spec = *f.spec();
    if axis >= spec.dim {
        return Err(Error::InvalidParameter(format!("axis {axis} out of range for dim {}", spec.dim)));
    }
    if t >= f.slices() {
        return Err(Error::TimeIndexOutOfRange { index: t, len: f.slices() });
    }
    let dx = spec.dx();
    let s = f.slice(t);
    let mut out = vec![0.0; spec.cells()];
    for cell in 0..spec.cells() {
        out[cell] = (s[spec.fwd(cell, axis)] - s[cell]) / dx;
    }
    Ok(out)
}

/// Discrete divergence `Σ_v (m_{i+e_v/2} - m_{i-e_v/2})/dx` of one time slice.
///
/// Periodic fluxes cancel pairwise, so the sum over all cells is zero up to
/// floating rounding.
pub fn divergence(m: &FaceField, t: usize) -> Result<Vec<f64>> {
    let spec = *m.spec();
    if t >= m.steps() {
        return Err(Error::TimeIndexOutOfRange { index: t, len: m.steps() });
    }
    let dx = spec.dx();
    let mut out = vec![0.0; spec.cells()];
    for axis in 0..spec.dim {
        let s = m.slice(axis, t);
        for cell in 0..spec.cells() {
            out[cell] += (s[cell] - s[spec.bwd(cell, axis)]) / dx;
        }
    }
    Ok(out)
}

/// Forward time difference `(ρ_{·,j+1/2} - ρ_{·,j-1/2})/dt` at integer step
/// `t` (0-based, `t = 0..n-1`); time never wraps.
pub fn time_diff_half(f: &CellField, t: usize) -> Result<Vec<f64>> {
    if f.layout() != TimeLayout::HalfStep {
        return Err(Error::LayoutMismatch { expected: "cell-half", found: f.layout().name() });
    }
    let spec = *f.spec();
    if t + 1 >= f.slices() {
        return Err(Error::TimeIndexOutOfRange { index: t, len: spec.n });
    }
    let dt = spec.dt();
    let a = f.slice(t);
    let b = f.slice(t + 1);
    Ok((0..spec.cells()).map(|cell| (b[cell] - a[cell]) / dt).collect())
}
