//! Forward self-consistency rehearsal for the two acceptance grids.

use std::time::Instant;

use mfginv_core::fields::{EntryMaps, GroundMetricModel, InteractionKernel, RunningCostF};
use mfginv_core::forward::{
    make_boundary, solve_forward, BoundaryPreset, EnergyModel, ForwardConfig, ForwardProblem,
};
use mfginv_core::grid::GridSpec;

fn run(label: &str, problem: &ForwardProblem, cfg: &ForwardConfig) {
    let t0 = Instant::now();
    let sol = solve_forward(problem, cfg).unwrap();
    let sys = sol.system_residuals;
    let mut drift = 0.0f64;
    for t in 0..problem.spec.n {
        drift = drift.max((sol.state.slice_mass(t + 1) - sol.state.slice_mass(t)).abs());
    }
    println!(
        "{label}: conv={} iters={} kkt={:.2e} hje={:.2e} cont={:.2e} curl={:.2e} loop={:.2e} drift={:.2e} time={:.1}s",
        sol.converged, sol.iters_run, sol.kkt_residual, sys.hje, sys.cont, sys.curl, sys.loop_sums, drift,
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    // 1-D quadratic-F
    let spec = GridSpec::new(1, 24, 16, 1.0).unwrap();
    let problem = ForwardProblem {
        spec,
        rho0: make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.3, 0.0], width: 0.12, base: 0.2 },
            &spec,
        )
        .unwrap(),
        rho_term: make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.7, 0.0], width: 0.12, base: 0.2 },
            &spec,
        )
        .unwrap(),
        metric: GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap(),
        energy: EnergyModel::RunningCost(RunningCostF::quadratic()),
    };
    let cfg = ForwardConfig { max_iters: 2_000_000, tol: 1e-10, check_every: 2000, ..Default::default() };
    run("1-D 24x16 quadratic-F", &problem, &cfg);

    // 2-D interaction
    let spec = GridSpec::new(2, 12, 10, 1.0).unwrap();
    let kernel = InteractionKernel::exp_quadratic(spec, [[3.0, 1.0], [1.0, 3.0]], 0.5).unwrap();
    let problem = ForwardProblem {
        spec,
        rho0: make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.3, 0.3], width: 0.15, base: 0.2 },
            &spec,
        )
        .unwrap(),
        rho_term: make_boundary(
            &BoundaryPreset::GaussianBump { center: [0.7, 0.7], width: 0.15, base: 0.2 },
            &spec,
        )
        .unwrap(),
        metric: GroundMetricModel::constant(spec, EntryMaps::Identity, 1.0).unwrap(),
        energy: EnergyModel::Interaction(kernel),
    };
    let cfg = ForwardConfig { max_iters: 2_000_000, tol: 1e-10, check_every: 2000, ..Default::default() };
    run("2-D 12x12x10 interaction", &problem, &cfg);
}
