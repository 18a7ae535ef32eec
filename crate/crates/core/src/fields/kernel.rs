//! Interaction kernel on the quotient grid and the torus convolution.
//!
//! The single-argument kernel `K̃` lives on the quotient grid
//! `Ṽ = {0..⌊m/2⌋}^d` (the discretization of `[0, 1/2]^d`); the induced
//! pairwise kernel is `K(i, i') = K̃(|i' - i|_T)` with the per-axis torus
//! distance `|k|_T = min(k mod m, m - k mod m)`. `K` is symmetric and
//! translation invariant by construction.
//!
//! Convolutions `(K*ρ)_i = Σ_{i'} K(i,i') ρ_{i'} dx^d` have two
//! interchangeable paths: a direct double sum (the reference) and a circular
//! FFT path. The default follows the grid size (direct for `m <= 32`, FFT
//! above); both stay available so the fast path can always be checked against
//! the reference.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Grid size above which `convolve` switches to the FFT path.
pub const FFT_CUTOVER_M: usize = 32;

/// Kernel values on the quotient grid `Ṽ`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionKernel {
    spec: GridSpec,
    values: Vec<f64>,
}

impl InteractionKernel {
    /// Side length of the quotient grid, `⌊m/2⌋ + 1`.
    pub fn qdim_for(spec: &GridSpec) -> usize {
        spec.m / 2 + 1
    }

    /// Number of quotient-grid points, `(⌊m/2⌋ + 1)^dim`.
    pub fn qcells_for(spec: &GridSpec) -> usize {
        let q = Self::qdim_for(spec);
        if spec.dim == 1 { q } else { q * q }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        InteractionKernel { spec, values: vec![0.0; Self::qcells_for(&spec)] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        let expect = Self::qcells_for(&spec);
        if values.len() != expect {
            return Err(Error::InvalidParameter(format!(
                "quotient kernel needs {expect} values, got {}",
                values.len()
            )));
        }
        Ok(InteractionKernel { spec, values })
    }

    /// Sample an analytic kernel at the quotient coordinates `q·dx`.
    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let qdim = Self::qdim_for(&spec);
        let dx = spec.dx();
        let mut values = Vec::with_capacity(Self::qcells_for(&spec));
        if spec.dim == 1 {
            for q in 0..qdim {
                values.push(f([q as f64 * dx, 0.0]));
            }
        } else {
            for q1 in 0..qdim {
                for q2 in 0..qdim {
                    values.push(f([q1 as f64 * dx, q2 as f64 * dx]));
                }
            }
        }
        InteractionKernel { spec, values }
    }

    /// The standard exponential-quadratic kernel
    /// `K̃(x) = exp(-x^T A x / ε)` with SPD adaptation matrix `A`.
    pub fn exp_quadratic(spec: GridSpec, a: [[f64; 2]; 2], eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel scaling eps must be > 0, got {eps}")));
        }
        Ok(Self::from_fn(spec, move |x| {
            let q = a[0][0] * x[0] * x[0] + (a[0][1] + a[1][0]) * x[0] * x[1] + a[1][1] * x[1] * x[1];
            (-q / eps).exp()
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn qdim(&self) -> usize {
        Self::qdim_for(&self.spec)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat quotient index of `(q1, q2)`.
    #[inline]
    pub fn qflat(&self, q: [usize; 2]) -> usize {
        if self.spec.dim == 1 { q[0] } else { q[0] * self.qdim() + q[1] }
    }

    /// Expand to the pairwise kernel on `V × V`.
    pub fn expand(&self) -> ExpandedKernel {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(self.spec.m);
        let inv = planner.plan_fft_inverse(self.spec.m);
        ExpandedKernel::new(self, fwd, inv)
    }

    /// Expansion that reuses existing FFT plans (for per-iteration
    /// re-expansion inside solvers).
    pub fn expand_with(&self, fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>>) -> ExpandedKernel {
        ExpandedKernel::new(self, fwd, inv)
    }

    pub fn l2_error_vs(&self, truth: &InteractionKernel) -> f64 {
        relative_l2(&self.values, &truth.values)
    }
}

/// Relative L2 error `‖a - b‖ / ‖b‖`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 { num } else { num / den }
}

/// Per-axis torus distance of a flat offset, as a flat quotient index.
pub fn quotient_of_offset(spec: &GridSpec, offset: usize) -> usize {
    let m = spec.m;
    let qdim = InteractionKernel::qdim_for(spec);
    let c = spec.coords(offset);
    let d0 = c[0].min(m - c[0]) % m;
    if spec.dim == 1 {
        d0
    } else {
        let d1 = c[1].min(m - c[1]) % m;
        d0 * qdim + d1
    }
}

/// All flat offsets whose per-axis torus distance equals each quotient index:
/// `shifts[q] = { s : |s|_T = q }`. The lengths form the pair-multiplicity
/// table used by the kernel-gradient accumulation.
pub fn quotient_shifts(spec: &GridSpec) -> Vec<Vec<usize>> {
    let m = spec.m;
    let qdim = InteractionKernel::qdim_for(spec);
    let axis_shifts = |q: usize| -> Vec<usize> {
        if q == 0 || 2 * q == m {
            vec![q]
        } else {
            vec![q, m - q]
        }
    };
    let mut out = Vec::with_capacity(InteractionKernel::qcells_for(spec));
    if spec.dim == 1 {
        for q in 0..qdim {
            out.push(axis_shifts(q));
        }
    } else {
        for q1 in 0..qdim {
            let s1 = axis_shifts(q1);
            for q2 in 0..qdim {
                let s2 = axis_shifts(q2);
                let mut flat = Vec::with_capacity(s1.len() * s2.len());
                for &a in &s1 {
                    for &b in &s2 {
                        flat.push(a * m + b);
                    }
                }
                out.push(flat);
            }
        }
    }
    out
}

struct KernelFft {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Forward FFT of the kernel row (conjugated, ready for correlation).
    row_hat: Vec<Complex<f64>>,
}

/// The pairwise kernel `K` on `V × V`, stored as one row
/// `row[s] = K̃(|s|_T)` (translation invariance makes one row sufficient).
pub struct ExpandedKernel {
    spec: GridSpec,
    row: Vec<f64>,
    fft: KernelFft,
}

impl ExpandedKernel {
    fn new(kernel: &InteractionKernel, fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>>) -> Self {
        let spec = kernel.spec;
        let cells = spec.cells();
        let mut row = vec![0.0; cells];
        for (s, slot) in row.iter_mut().enumerate() {
            *slot = kernel.values[quotient_of_offset(&spec, s)];
        }
        let mut row_hat: Vec<Complex<f64>> = row.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft_forward(&spec, &fwd, &mut row_hat);
        for z in row_hat.iter_mut() {
            *z = z.conj();
        }
        ExpandedKernel { spec, row, fft: KernelFft { fwd, inv, row_hat } }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Kernel row `K(0, ·)` over `V` (figure-ready slice of the expansion).
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    /// Pairwise value `K(i, i')`.
    #[inline]
    pub fn at(&self, i: usize, i2: usize) -> f64 {
        let m = self.spec.m;
        if self.spec.dim == 1 {
            self.row[(i2 + m - i) % m]
        } else {
            let a = self.spec.coords(i);
            let b = self.spec.coords(i2);
            let s1 = (b[0] + m - a[0]) % m;
            let s2 = (b[1] + m - a[1]) % m;
            self.row[s1 * m + s2]
        }
    }

    /// `(K * ρ)_i = Σ_{i'} K(i,i') ρ_{i'} dx^d`; default path by grid size.
    pub fn convolve(&self, slice: &[f64]) -> Vec<f64> {
        if self.spec.m <= FFT_CUTOVER_M {
            self.convolve_direct(slice)
        } else {
            self.convolve_fft(slice)
        }
    }

    /// Reference path: direct double sum.
    pub fn convolve_direct(&self, slice: &[f64]) -> Vec<f64> {
        let vol = self.spec.cell_volume();
        let out = cross_correlate_direct(&self.spec, &self.row, slice);
        out.into_iter().map(|x| x * vol).collect()
    }

    /// Fast path: circular FFT; must match the direct path.
    pub fn convolve_fft(&self, slice: &[f64]) -> Vec<f64> {
        let spec = &self.spec;
        let cells = spec.cells();
        debug_assert_eq!(slice.len(), cells);
        let mut buf: Vec<Complex<f64>> = slice.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft_forward(spec, &self.fft.fwd, &mut buf);
        for (z, rh) in buf.iter_mut().zip(&self.fft.row_hat) {
            *z *= rh;
        }
        fft_forward(spec, &self.fft.inv, &mut buf);
        let scale = self.spec.cell_volume() / cells as f64;
        buf.into_iter().map(|z| z.re * scale).collect()
    }

    /// Cross-correlation against the kernel row without the `dx^d` weight
    /// (used by adjoint accumulations); same path switch as `convolve`.
    pub fn correlate_with(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        if self.spec.m <= FFT_CUTOVER_M {
            cross_correlate_direct(&self.spec, a, b)
        } else {
            cross_correlate_fft(&self.spec, &self.fft.fwd, &self.fft.inv, a, b)
        }
    }
}

/// `out[s] = Σ_i a[i] · b[(i+s) mod m]` (componentwise shift on the torus).
pub fn cross_correlate_direct(spec: &GridSpec, a: &[f64], b: &[f64]) -> Vec<f64> {
    let cells = spec.cells();
    let m = spec.m;
    let mut out = vec![0.0; cells];
    if spec.dim == 1 {
        for (s, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..m {
                let j = i + s;
                acc += a[i] * b[if j >= m { j - m } else { j }];
            }
            *slot = acc;
        }
    } else {
        for s1 in 0..m {
            for s2 in 0..m {
                let mut acc = 0.0;
                for i1 in 0..m {
                    let j1 = if i1 + s1 >= m { i1 + s1 - m } else { i1 + s1 };
                    for i2 in 0..m {
                        let j2 = if i2 + s2 >= m { i2 + s2 - m } else { i2 + s2 };
                        acc += a[i1 * m + i2] * b[j1 * m + j2];
                    }
                }
                out[s1 * m + s2] = acc;
            }
        }
    }
    out
}

/// FFT path of [`cross_correlate_direct`].
pub fn cross_correlate_fft(
    spec: &GridSpec,
    fwd: &Arc<dyn Fft<f64>>,
    inv: &Arc<dyn Fft<f64>>,
    a: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let cells = spec.cells();
    let mut ah: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut bh: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft_forward(spec, fwd, &mut ah);
    fft_forward(spec, fwd, &mut bh);
    for (z, w) in ah.iter_mut().zip(&bh) {
        *z = z.conj() * w;
    }
    fft_forward(spec, inv, &mut ah);
    let scale = 1.0 / cells as f64;
    ah.into_iter().map(|z| z.re * scale).collect()
}

/// Apply a 1-D or row-column 2-D transform in place.
fn fft_forward(spec: &GridSpec, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>]) {
    let m = spec.m;
    if spec.dim == 1 {
        plan.process(buf);
        return;
    }
    // rows (contiguous i2 runs)
    for r in 0..m {
        plan.process(&mut buf[r * m..(r + 1) * m]);
    }
    // columns via gather/scatter
    let mut col = vec![Complex::new(0.0, 0.0); m];
    for c in 0..m {
        for r in 0..m {
            col[r] = buf[r * m + c];
        }
        plan.process(&mut col);
        for r in 0..m {
            buf[r * m + c] = col[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_seq(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        }
    }

    #[test]
    fn constant_ktilde_expands_to_constant_k() {
        let spec = GridSpec::new(1, 6, 2, 1.0).unwrap();
        let k = InteractionKernel::from_fn(spec, |_| 2.5);
        let ek = k.expand();
        for i in 0..spec.cells() {
            for j in 0..spec.cells() {
                assert_eq!(ek.at(i, j), 2.5);
            }
        }
    }

    #[test]
    fn torus_distance_indexing() {
        // m = 4, ktilde on axis distances {0, 1, 2}; K(0, 3) has distance
        // min(3, 1) = 1.
        let spec = GridSpec::new(1, 4, 2, 1.0).unwrap();
        let k = InteractionKernel::from_values(spec, vec![10.0, 11.0, 12.0]).unwrap();
        let ek = k.expand();
        assert_eq!(ek.at(0, 3), 11.0);
        assert_eq!(ek.at(0, 2), 12.0);
        assert_eq!(ek.at(1, 1), 10.0);
    }

    #[test]
    fn expansion_is_symmetric_and_translation_invariant() {
        let spec = GridSpec::new(1, 6, 2, 1.0).unwrap();
        let mut next = rng_seq(43);
        let vals: Vec<f64> = (0..InteractionKernel::qcells_for(&spec)).map(|_| next()).collect();
        let k = InteractionKernel::from_values(spec, vals).unwrap();
        let ek = k.expand();
        for i in 0..spec.cells() {
            for j in 0..spec.cells() {
                assert_eq!(ek.at(i, j), ek.at(j, i));
                let shift = (j + spec.cells() - i) % spec.cells();
                assert_eq!(ek.at(i, j), ek.at(0, shift));
            }
        }
    }

    #[test]
    fn convolve_zero_kernel_is_zero() {
        let spec = GridSpec::new(1, 8, 2, 1.0).unwrap();
        let k = InteractionKernel::zeros(spec);
        let ek = k.expand();
        let rho = vec![1.0; spec.cells()];
        assert!(ek.convolve(&rho).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn convolve_unit_spike() {
        // K(x) = exp(-x²/0.1): at the spike cell the convolution value is
        // dx · K(0) = dx.
        let spec = GridSpec::new(1, 10, 2, 1.0).unwrap();
        let k = InteractionKernel::from_fn(spec, |x| (-x[0] * x[0] / 0.1).exp());
        let ek = k.expand();
        let mut rho = vec![0.0; spec.cells()];
        let i0 = 4;
        rho[i0] = 1.0;
        let conv = ek.convolve(&rho);
        assert!((conv[i0] - spec.dx()).abs() < 1e-15);
        // neighbor picks up dx · K(dx)
        let expect = spec.dx() * (-(spec.dx() * spec.dx()) / 0.1).exp();
        assert!((conv[i0 + 1] - expect).abs() < 1e-15);
    }

    #[test]
    fn convolve_constant_kernel_gives_mass() {
        let spec = GridSpec::new(2, 5, 2, 1.0).unwrap();
        let mut next = rng_seq(7);
        let rho: Vec<f64> = (0..spec.cells()).map(|_| next() + 0.1).collect();
        let k = InteractionKernel::from_values(
            spec,
            vec![3.0; InteractionKernel::qcells_for(&spec)],
        )
        .unwrap();
        let conv = k.expand().convolve(&rho);
        let mass: f64 = rho.iter().sum::<f64>() * spec.cell_volume();
        for v in conv {
            assert!((v - 3.0 * mass).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_matches_direct() {
        for spec in [GridSpec::new(1, 50, 2, 1.0).unwrap(), GridSpec::new(2, 12, 2, 1.0).unwrap()] {
            let mut next = rng_seq(11 + spec.dim as u64);
            let vals: Vec<f64> =
                (0..InteractionKernel::qcells_for(&spec)).map(|_| next() - 0.5).collect();
            let k = InteractionKernel::from_values(spec, vals).unwrap();
            let ek = k.expand();
            let rho: Vec<f64> = (0..spec.cells()).map(|_| next() - 0.25).collect();
            let direct = ek.convolve_direct(&rho);
            let fast = ek.convolve_fft(&rho);
            let scale = direct.iter().fold(1e-30f64, |a, &x| a.max(x.abs()));
            for (d, f) in direct.iter().zip(&fast) {
                assert!((d - f).abs() <= 1e-10 * scale.max(1.0), "direct={d} fft={f}");
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let spec = GridSpec::new(1, 12, 2, 1.0).unwrap();
        let mut next = rng_seq(99);
        let vals: Vec<f64> = (0..InteractionKernel::qcells_for(&spec)).map(|_| next()).collect();
        let ek = InteractionKernel::from_values(spec, vals).unwrap().expand();
        let a: Vec<f64> = (0..spec.cells()).map(|_| next() - 0.5).collect();
        let b: Vec<f64> = (0..spec.cells()).map(|_| next() - 0.5).collect();
        let ka = ek.convolve(&a);
        let kb = ek.convolve(&b);
        let lhs: f64 = ka.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&kb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn quotient_shift_table_covers_all_offsets() {
        for spec in [GridSpec::new(1, 7, 2, 1.0).unwrap(), GridSpec::new(2, 6, 2, 1.0).unwrap()] {
            let shifts = quotient_shifts(&spec);
            let mut seen = vec![false; spec.cells()];
            for (q, list) in shifts.iter().enumerate() {
                for &s in list {
                    assert_eq!(quotient_of_offset(&spec, s), q);
                    assert!(!seen[s], "offset {s} listed twice");
                    seen[s] = true;
                }
            }
            assert!(seen.iter().all(|&x| x), "every offset maps to exactly one quotient index");
        }
    }

    #[test]
    fn cross_correlate_fft_matches_direct() {
        let spec = GridSpec::new(2, 8, 2, 1.0).unwrap();
        let mut next = rng_seq(5);
        let a: Vec<f64> = (0..spec.cells()).map(|_| next() - 0.5).collect();
        let b: Vec<f64> = (0..spec.cells()).map(|_| next() - 0.5).collect();
        let direct = cross_correlate_direct(&spec, &a, &b);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(spec.m);
        let inv = planner.plan_fft_inverse(spec.m);
        let fast = cross_correlate_fft(&spec, &fwd, &inv, &a, &b);
        for (d, f) in direct.iter().zip(&fast) {
            assert!((d - f).abs() < 1e-11, "direct={d} fft={f}");
        }
    }
}
