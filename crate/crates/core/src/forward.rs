//! Forward MFG solver.
//!
//! Solves the discrete problem
//!
//! ```text
//! min_{m,ρ}  Σ_{i,j} ½ (m_{i+e_v/2,j})_v^T G_{M,i} (m_{i+e_v/2,j})_v / ρ_{i,j-1/2}
//!            + Σ_{j=2..n} 𝓕({ρ_{·,j-1/2}}) / dx^d
//! s.t.       continuity = 0,   ρ_{·,1/2} = ρ0,  ρ_{·,n+1/2} = ρT
//! ```
//!
//! by a primal-dual saddle-point iteration on its Lagrangian: gradient
//! descent on the flux and the interior density slices, gradient ascent on
//! the continuity multiplier `φ` against the extrapolated primals
//! (`x* = 2 x^{k+1} - x^k`). Convergence is declared when the max-abs KKT
//! residual drops below the tolerance; the boundary density slices are never
//! updated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    residuals, Energy, ExpandedKernel, GroundMetricModel, InteractionKernel,
    ResidualNorms, RunningCostF, StaggeredState, RHO_FLOOR,
};
use crate::grid::{CellField, FaceField, GridSpec, TimeLayout};

/// Energy functional of the forward problem.
#[derive(Clone, Debug)]
pub enum EnergyModel {
    RunningCost(RunningCostF),
    Interaction(InteractionKernel),
}

impl EnergyModel {
    fn expand(&self) -> Option<ExpandedKernel> {
        match self {
            EnergyModel::RunningCost(_) => None,
            EnergyModel::Interaction(k) => Some(k.expand()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardProblem {
    pub spec: GridSpec,
    /// Initial density slice `ρ_{·,1/2}`.
    pub rho0: Vec<f64>,
    /// Terminal density slice `ρ_{·,n+1/2}`.
    pub rho_term: Vec<f64>,
    pub metric: GroundMetricModel,
    pub energy: EnergyModel,
}

impl ForwardProblem {
    pub fn validate(&self) -> Result<()> {
        let cells = self.spec.cells();
        if self.rho0.len() != cells || self.rho_term.len() != cells {
            return Err(Error::InvalidParameter("boundary slices must have one value per cell".into()));
        }
        if self.rho0.iter().chain(&self.rho_term).any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidParameter("boundary densities must be strictly positive".into()));
        }
        let m0: f64 = self.rho0.iter().sum();
        let mt: f64 = self.rho_term.iter().sum();
        if (m0 - mt).abs() > 1e-10 * m0.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "boundary masses differ: {m0} vs {mt}"
            )));
        }
        self.metric.validate_spd()?;
        Ok(())
    }
}

/// Step sizes and stopping rule of the forward PDHG loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub tau_flux: f64,
    pub tau_rho: f64,
    pub sigma: f64,
    pub max_iters: usize,
    /// Convergence threshold on the max-abs KKT residual.
    pub tol: f64,
    pub rho_min: f64,
    /// Cadence of convergence checks / diagnostics rows.
    pub check_every: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            tau_flux: 0.0, // 0 = auto-scale from the grid
            tau_rho: 0.0,
            sigma: 0.0,
            max_iters: 2_000_000,
            tol: 1e-9,
            rho_min: RHO_FLOOR,
            check_every: 500,
        }
    }
}

impl ForwardConfig {
    /// Resolve auto-scaled step sizes: `τ = σ = 0.4 / ‖A‖` with
    /// `‖A‖² ≈ (2·dim/dx)² + (2/dt)²` estimating the continuity operator.
    pub fn resolved(&self, spec: &GridSpec) -> ForwardConfig {
        let mut cfg = *self;
        let a2 = {
            let sx = 2.0 * spec.dim as f64 / spec.dx();
            let st = 2.0 / spec.dt();
            (sx * sx + st * st).sqrt()
        };
        let auto = 0.4 / a2;
        if cfg.tau_flux <= 0.0 {
            cfg.tau_flux = auto;
        }
        if cfg.tau_rho <= 0.0 {
            cfg.tau_rho = auto;
        }
        if cfg.sigma <= 0.0 {
            cfg.sigma = auto;
        }
        cfg
    }
}

/// One diagnostics row (written to `diagnostics.csv`).
#[derive(Clone, Copy, Debug)]
pub struct ForwardDiagRow {
    pub iter: usize,
    pub obj: f64,
    pub r_cont: f64,
    pub r_hje: f64,
    pub r_curl: f64,
    pub r_loop: f64,
}

pub struct ForwardSolution {
    pub state: StaggeredState,
    pub phi: CellField,
    pub diagnostics: Vec<ForwardDiagRow>,
    pub converged: bool,
    pub iters_run: usize,
    /// Max-abs KKT residual at exit.
    pub kkt_residual: f64,
    /// Residual norms of the four-constraint optimality system for the
    /// returned state.
    pub system_residuals: ResidualNorms,
}

/// Objective of the discrete forward problem for a given flux/density pair.
pub fn forward_objective(flux: &FaceField, rho: &CellField, problem: &ForwardProblem) -> f64 {
    let expanded = problem.energy.expand();
    forward_objective_inner(flux, rho, problem, expanded.as_ref())
}

fn forward_objective_inner(
    flux: &FaceField,
    rho: &CellField,
    problem: &ForwardProblem,
    expanded: Option<&ExpandedKernel>,
) -> f64 {
    let spec = problem.spec;
    let mut obj = 0.0;
    for t in 0..spec.n {
        let rs = rho.slice(t);
        for cell in 0..spec.cells() {
            let g = problem.metric.metric_at(cell);
            let mb = if spec.dim == 1 {
                [flux.at(0, t, cell), 0.0]
            } else {
                [flux.at(0, t, cell), flux.at(1, t, cell)]
            };
            obj += 0.5 * g.quad(mb) / rs[cell].max(RHO_FLOOR);
        }
    }
    for t in 1..spec.n {
        let rs = rho.slice(t);
        match (&problem.energy, expanded) {
            (EnergyModel::RunningCost(f), _) => {
                obj += rs.iter().map(|&r| f.f(r)).sum::<f64>();
            }
            (EnergyModel::Interaction(_), Some(k)) => {
                let conv = k.convolve(rs);
                obj += 0.5 * rs.iter().zip(&conv).map(|(r, c)| r * c).sum::<f64>();
            }
            (EnergyModel::Interaction(_), None) => unreachable!(),
        }
    }
    obj
}

/// Solve the forward problem; returns the state with `v = m/ρ`, the
/// continuity multiplier, and per-check diagnostics.
pub fn solve_forward(problem: &ForwardProblem, cfg: &ForwardConfig) -> Result<ForwardSolution> {
    problem.validate()?;
    let spec = problem.spec;
    let cfg = cfg.resolved(&spec);
    let cells = spec.cells();
    let (dx, dt) = (spec.dx(), spec.dt());
    let expanded = problem.energy.expand();

    // Interior density initialized by linear interpolation between the fixed
    // boundary slices.
    let mut rho = CellField::zeros(spec, TimeLayout::HalfStep);
    for t in 0..=spec.n {
        let a = t as f64 / spec.n as f64;
        let slice = rho.slice_mut(t);
        for cell in 0..cells {
            slice[cell] = (1.0 - a) * problem.rho0[cell] + a * problem.rho_term[cell];
        }
    }
    let mut flux = FaceField::zeros(spec);
    let mut phi = CellField::zeros(spec, TimeLayout::IntStep);

    let mut flux_old = flux.clone();
    let mut rho_old = rho.clone();
    let mut d_flux = FaceField::zeros(spec);
    let mut d_rho = CellField::zeros(spec, TimeLayout::HalfStep);

    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut iters_run = 0;
    let mut kkt = f64::INFINITY;

    for iter in 0..cfg.max_iters {
        iters_run = iter + 1;
        flux_old.values_mut().copy_from_slice(flux.values());
        rho_old.values_mut().copy_from_slice(rho.values());

        compute_gradients(problem, expanded.as_ref(), &flux, &rho, &phi, cfg.rho_min, &mut d_flux, &mut d_rho);

        for (x, g) in flux.values_mut().iter_mut().zip(d_flux.values()) {
            *x -= cfg.tau_flux * g;
        }
        for t in 1..spec.n {
            let slice = rho.slice_mut(t);
            let grad = d_rho.slice(t);
            for cell in 0..cells {
                slice[cell] = (slice[cell] - cfg.tau_rho * grad[cell]).max(cfg.rho_min);
            }
        }

        // Dual ascent on the continuity residual at the extrapolated primals.
        for t in 0..spec.n {
            let p = phi.slice_mut(t);
            let r_new = rho.slice(t + 1);
            let r_old_new = rho.slice(t);
            let r_prev = rho_old.slice(t + 1);
            let r_old_prev = rho_old.slice(t);
            for cell in 0..cells {
                let dr_star = (2.0 * r_new[cell] - r_prev[cell])
                    - (2.0 * r_old_new[cell] - r_old_prev[cell]);
                p[cell] += cfg.sigma * dr_star / dt;
            }
            for axis in 0..spec.dim {
                let f_new = flux.slice(axis, t);
                let f_prev = flux_old.slice(axis, t);
                for cell in 0..cells {
                    let star = 2.0 * f_new[cell] - f_prev[cell];
                    let star_b = {
                        let b = spec.bwd(cell, axis);
                        2.0 * f_new[b] - f_prev[b]
                    };
                    p[cell] += cfg.sigma * (star - star_b) / dx;
                }
            }
        }

        if (iter + 1) % cfg.check_every == 0 || iter + 1 == cfg.max_iters {
            if !(flux.all_finite() && rho.all_finite() && phi.all_finite()) {
                return Err(Error::NonFinite { context: "forward solve", iter: iter + 1 });
            }
            compute_gradients(problem, expanded.as_ref(), &flux, &rho, &phi, cfg.rho_min, &mut d_flux, &mut d_rho);
            let cont = continuity_max(&spec, &flux, &rho);
            kkt = d_flux.max_abs().max(interior_max(&spec, &d_rho)).max(cont);

            let state = StaggeredState::from_flux(rho.clone(), &flux, cfg.rho_min)?;
            let energy_ref = energy_ref(&problem.energy, expanded.as_ref());
            let sys = residuals(&state, &problem.metric, energy_ref).max_abs();
            diagnostics.push(ForwardDiagRow {
                iter: iter + 1,
                obj: forward_objective_inner(&flux, &rho, problem, expanded.as_ref()),
                r_cont: sys.cont,
                r_hje: sys.hje,
                r_curl: sys.curl,
                r_loop: sys.loop_sums,
            });
            if kkt <= cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let state = StaggeredState::from_flux(rho, &flux, cfg.rho_min)?;
    let energy_ref = energy_ref(&problem.energy, expanded.as_ref());
    let system_residuals = residuals(&state, &problem.metric, energy_ref).max_abs();
    Ok(ForwardSolution {
        state,
        phi,
        diagnostics,
        converged,
        iters_run,
        kkt_residual: kkt,
        system_residuals,
    })
}

fn energy_ref<'a>(energy: &'a EnergyModel, expanded: Option<&'a ExpandedKernel>) -> Energy<'a> {
    match energy {
        EnergyModel::RunningCost(f) => Energy::RunningCost(f),
        EnergyModel::Interaction(_) => Energy::Interaction(expanded.expect("kernel expanded")),
    }
}

/// Gradients of the forward Lagrangian w.r.t. flux and density.
///
/// Flux faces: `[G_i m_bundle]_v / ρ + (φ_i - φ_{i+e_v})/dx`.
/// Interior densities: `-½ m^T G m / ρ² + (φ_{j-1} - φ_j)/dt + δ𝓕/δρ`.
fn compute_gradients(
    problem: &ForwardProblem,
    expanded: Option<&ExpandedKernel>,
    flux: &FaceField,
    rho: &CellField,
    phi: &CellField,
    floor: f64,
    d_flux: &mut FaceField,
    d_rho: &mut CellField,
) {
    let spec = problem.spec;
    let cells = spec.cells();
    let (dx, dt) = (spec.dx(), spec.dt());

    for t in 0..spec.n {
        let rs = rho.slice(t);
        let ps = phi.slice(t);
        for cell in 0..cells {
            let g = problem.metric.metric_at(cell);
            let mb = if spec.dim == 1 {
                [flux.at(0, t, cell), 0.0]
            } else {
                [flux.at(0, t, cell), flux.at(1, t, cell)]
            };
            let gm = g.mul_vec(mb);
            let r = rs[cell].max(floor);
            d_flux.set(0, t, cell, gm[0] / r + (ps[cell] - ps[spec.fwd(cell, 0)]) / dx);
            if spec.dim == 2 {
                d_flux.set(1, t, cell, gm[1] / r + (ps[cell] - ps[spec.fwd(cell, 1)]) / dx);
            }
        }
    }

    for t in 1..spec.n {
        let rs = rho.slice(t);
        let pot: Vec<f64> = match (&problem.energy, expanded) {
            (EnergyModel::RunningCost(f), _) => rs.iter().map(|&r| f.df(r)).collect(),
            (EnergyModel::Interaction(_), Some(k)) => k.convolve(rs),
            (EnergyModel::Interaction(_), None) => unreachable!(),
        };
        let p_prev = phi.slice(t - 1);
        let p_cur = phi.slice(t);
        let slice = d_rho.slice_mut(t);
        for cell in 0..cells {
            let g = problem.metric.metric_at(cell);
            let mb = if spec.dim == 1 {
                [flux.at(0, t, cell), 0.0]
            } else {
                [flux.at(0, t, cell), flux.at(1, t, cell)]
            };
            let r = rs[cell].max(floor);
            slice[cell] = -0.5 * g.quad(mb) / (r * r)
                + (p_prev[cell] - p_cur[cell]) / dt
                + pot[cell];
        }
    }
}

fn interior_max(spec: &GridSpec, d_rho: &CellField) -> f64 {
    let mut acc = 0.0f64;
    for t in 1..spec.n {
        for &x in d_rho.slice(t) {
            acc = acc.max(x.abs());
        }
    }
    acc
}

fn continuity_max(spec: &GridSpec, flux: &FaceField, rho: &CellField) -> f64 {
    let (dx, dt) = (spec.dx(), spec.dt());
    let mut acc = 0.0f64;
    for t in 0..spec.n {
        let r_old = rho.slice(t);
        let r_new = rho.slice(t + 1);
        for cell in 0..spec.cells() {
            let mut r = (r_new[cell] - r_old[cell]) / dt;
            for axis in 0..spec.dim {
                let f = flux.slice(axis, t);
                r += (f[cell] - f[spec.bwd(cell, axis)]) / dx;
            }
            acc = acc.max(r.abs());
        }
    }
    acc
}

/// Boundary density presets; every preset is strictly positive and
/// mass-normalized on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryPreset {
    Uniform,
    GaussianBump {
        center: [f64; 2],
        width: f64,
        #[serde(default = "default_base")]
        base: f64,
    },
    DoubleBump {
        centers: [[f64; 2]; 2],
        width: f64,
        #[serde(default = "default_base")]
        base: f64,
    },
}

fn default_base() -> f64 {
    0.1
}

/// Squared torus distance between two positions.
fn torus_dist2(spec: &GridSpec, x: [f64; 2], c: [f64; 2]) -> f64 {
    let mut acc = 0.0;
    for axis in 0..spec.dim {
        let d = (x[axis] - c[axis]).rem_euclid(1.0);
        let d = d.min(1.0 - d);
        acc += d * d;
    }
    acc
}

/// Build a boundary density slice with unit total mass `Σ ρ dx^d = 1`.
pub fn make_boundary(preset: &BoundaryPreset, spec: &GridSpec) -> Result<Vec<f64>> {
    let mut slice = vec![0.0; spec.cells()];
    match preset {
        BoundaryPreset::Uniform => slice.fill(1.0),
        BoundaryPreset::GaussianBump { center, width, base } => {
            if !(*width > 0.0) {
                return Err(Error::InvalidParameter(format!("bump width must be > 0, got {width}")));
            }
            for (cell, slot) in slice.iter_mut().enumerate() {
                let d2 = torus_dist2(spec, spec.cell_position(cell), *center);
                *slot = base + (-d2 / (2.0 * width * width)).exp();
            }
        }
        BoundaryPreset::DoubleBump { centers, width, base } => {
            if !(*width > 0.0) {
                return Err(Error::InvalidParameter(format!("bump width must be > 0, got {width}")));
            }
            for (cell, slot) in slice.iter_mut().enumerate() {
                let x = spec.cell_position(cell);
                let d0 = torus_dist2(spec, x, centers[0]);
                let d1 = torus_dist2(spec, x, centers[1]);
                *slot = base + (-d0 / (2.0 * width * width)).exp() + (-d1 / (2.0 * width * width)).exp();
            }
        }
    }
    let mass: f64 = slice.iter().sum::<f64>() * spec.cell_volume();
    for v in &mut slice {
        *v /= mass;
    }
    Ok(slice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::EntryMaps;

    #[test]
    fn uniform_boundary_is_unit_mass() {
        let spec = GridSpec::new(1, 50, 4, 1.0).unwrap();
        let b = make_boundary(&BoundaryPreset::Uniform, &spec).unwrap();
        assert!(b.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        let mass: f64 = b.iter().sum::<f64>() * spec.cell_volume();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_bump_is_symmetric_about_center() {
        let spec = GridSpec::new(1, 16, 4, 1.0).unwrap();
        let b = make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.5, 0.0], width: 0.1, base: 0.1 },
            &spec,
        )
        .unwrap();
        // center 0.5 sits on cell 8; reflection i -> 16-i fixes the bump.
        for i in 1..spec.m {
            let j = (spec.m - i) % spec.m;
            assert!((b[i] - b[j]).abs() < 1e-12, "{i} vs {j}");
        }
    }

    #[test]
    fn presets_share_total_mass() {
        let spec = GridSpec::new(2, 12, 4, 1.0).unwrap();
        let masses: Vec<f64> = [
            BoundaryPreset::Uniform,
            BoundaryPreset::GaussianBump { center: [0.3, 0.6], width: 0.15, base: 0.1 },
            BoundaryPreset::DoubleBump {
                centers: [[0.2, 0.2], [0.7, 0.8]],
                width: 0.1,
                base: 0.1,
            },
        ]
        .iter()
        .map(|p| make_boundary(p, &spec).unwrap().iter().sum::<f64>() * spec.cell_volume())
        .collect();
        for m in &masses {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_width_is_rejected() {
        let spec = GridSpec::new(1, 8, 4, 1.0).unwrap();
        let p = BoundaryPreset::GaussianBump { center: [0.0, 0.0], width: 0.0, base: 0.1 };
        assert!(make_boundary(&p, &spec).is_err());
    }

    #[test]
    fn stationary_problem_converges_to_constant() {
        let spec = GridSpec::new(1, 8, 4, 1.0).unwrap();
        let uniform = make_boundary(&BoundaryPreset::Uniform, &spec).unwrap();
        let problem = ForwardProblem {
            spec,
            rho0: uniform.clone(),
            rho_term: uniform.clone(),
            metric: GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap(),
            energy: EnergyModel::RunningCost(RunningCostF::quadratic()),
        };
        let cfg = ForwardConfig { max_iters: 20_000, tol: 1e-12, ..Default::default() };
        let sol = solve_forward(&problem, &cfg).unwrap();
        assert!(sol.converged, "kkt residual = {}", sol.kkt_residual);
        assert!(sol.state.vel.max_abs() < 1e-10);
        for t in 0..=spec.n {
            for &r in sol.state.rho.slice(t) {
                assert!((r - 1.0).abs() < 1e-9);
            }
        }
        // objective reduces to Σ_{j=2..n} Σ_i F(1) = (n-1)·m·0.5
        let obj = forward_objective(&sol.state.flux(), &sol.state.rho, &problem);
        let expect = (spec.n - 1) as f64 * spec.m as f64 * 0.5;
        assert!((obj - expect).abs() < 1e-8, "obj={obj} expect={expect}");
    }

    #[test]
    fn objective_single_face_case() {
        // 1-D, G = 1, one face with m = 2, ρ = 1, F = 0: contribution ½·2² = 2.
        let spec = GridSpec::new(1, 4, 2, 1.0).unwrap();
        let problem = ForwardProblem {
            spec,
            rho0: vec![1.0; 4],
            rho_term: vec![1.0; 4],
            metric: GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap(),
            energy: EnergyModel::RunningCost(RunningCostF::Zero),
        };
        let rho = CellField::constant(spec, TimeLayout::HalfStep, 1.0);
        let mut flux = FaceField::zeros(spec);
        flux.set(0, 1, 2, 2.0);
        assert_eq!(forward_objective(&flux, &rho, &problem), 2.0);
        // zero flux, zero F: objective 0
        let zero = FaceField::zeros(spec);
        assert_eq!(forward_objective(&zero, &rho, &problem), 0.0);
    }

    #[test]
    fn transport_problem_satisfies_system_residuals() {
        let spec = GridSpec::new(1, 12, 8, 1.0).unwrap();
        let rho0 = make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.25, 0.0], width: 0.12, base: 0.2 },
            &spec,
        )
        .unwrap();
        let rho_term = make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.6, 0.0], width: 0.12, base: 0.2 },
            &spec,
        )
        .unwrap();
        let problem = ForwardProblem {
            spec,
            rho0,
            rho_term,
            metric: GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap(),
            energy: EnergyModel::RunningCost(RunningCostF::quadratic()),
        };
        let cfg = ForwardConfig { max_iters: 400_000, tol: 1e-10, ..Default::default() };
        let sol = solve_forward(&problem, &cfg).unwrap();
        assert!(sol.converged, "kkt={}", sol.kkt_residual);
        let sys = sol.system_residuals;
        assert!(sys.cont < 1e-8, "cont={}", sys.cont);
        assert!(sys.hje < 1e-6, "hje={}", sys.hje);
        assert_eq!(sys.curl, 0.0);
        assert!(sys.loop_sums < 1e-7, "loops={}", sys.loop_sums);
        // mass conservation across slices
        for t in 0..spec.n {
            let drift = (sol.state.slice_mass(t + 1) - sol.state.slice_mass(t)).abs();
            assert!(drift < 1e-9, "drift={drift}");
        }
    }
}
