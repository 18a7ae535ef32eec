//! Closed-loop experiments: forward solve -> observations -> recovery.
//! Run with `cargo run --release -p mfginv-core --example closed_loop [metric|kernel|bregman]`.

use std::time::Instant;

use mfginv_core::bregman::{run_bregman_metric, BregmanConfig};
use mfginv_core::fields::{EntryMaps, GroundMetricModel, InteractionKernel, RunningCostF};
use mfginv_core::forward::{
    make_boundary, solve_forward, BoundaryPreset, EnergyModel, ForwardConfig, ForwardProblem,
};
use mfginv_core::grid::GridSpec;
use mfginv_core::inverse::{
    solve_inverse_kernel, solve_inverse_metric, Observation, SolverConfig,
};
use mfginv_core::noise::inject_noise;

fn bump(spec: &GridSpec, center: f64) -> Vec<f64> {
    make_boundary(
        &BoundaryPreset::GaussianBump { center: [center, 0.0], width: 0.12, base: 0.2 },
        spec,
    )
    .unwrap()
}

fn forward_obs(spec: GridSpec, metric: &GroundMetricModel, energy: EnergyModel) -> Observation {
    let problem = ForwardProblem {
        spec,
        rho0: bump(&spec, 0.3),
        rho_term: bump(&spec, 0.7),
        metric: metric.clone(),
        energy,
    };
    let fcfg = ForwardConfig { max_iters: 1_500_000, tol: 1e-9, check_every: 2000, ..Default::default() };
    let t0 = Instant::now();
    let sol = solve_forward(&problem, &fcfg).unwrap();
    println!(
        "forward: converged={} iters={} kkt={:.2e} time={:.1}s",
        sol.converged,
        sol.iters_run,
        sol.kkt_residual,
        t0.elapsed().as_secs_f64()
    );
    Observation::from_state(&sol.state)
}

fn metric_loop() {
    let spec = GridSpec::new(1, 50, 30, 1.0).unwrap();
    let truth = GroundMetricModel::from_fn(spec, EntryMaps::Scalar, |p| {
        1.0 - 0.6 * (std::f64::consts::PI * p[0]).sin().powi(2)
    })
    .unwrap();
    let obs = forward_obs(spec, &truth, EnergyModel::RunningCost(RunningCostF::quadratic()));
    let init = GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap();
    let known = [(0usize, truth.g0()[0])];
    for gamma_exp in [-8, -7, -6, -5, -4, -3] {
        let mut cfg = SolverConfig::standard(&obs);
        cfg.gamma = 10f64.powi(gamma_exp);
        cfg.iters = 60_000;
        cfg.trace_every = 0;
        let t0 = Instant::now();
        let (_m, sol) = solve_inverse_metric(
            &obs,
            &RunningCostF::quadratic(),
            &cfg,
            &init,
            &known,
            Some(truth.g0()),
        )
        .unwrap();
        println!(
            "metric gamma=1e{gamma_exp}: err={:.4} time={:.1}s",
            sol.final_theta_err.unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}

fn kernel_loop() {
    let spec = GridSpec::new(1, 50, 30, 1.0).unwrap();
    let metric = GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap();
    let truth = InteractionKernel::from_fn(spec, |x| (-x[0] * x[0] / 0.1).exp());
    let obs = forward_obs(spec, &metric, EnergyModel::Interaction(truth.clone()));
    let init = InteractionKernel::from_values(
        spec,
        vec![0.5; InteractionKernel::qcells_for(&spec)],
    )
    .unwrap();
    let known = [(0usize, 1.0)];
    for gamma_exp in [-6, -5, -4, -3] {
        let mut cfg = SolverConfig::standard(&obs);
        cfg.gamma = 10f64.powi(gamma_exp);
        cfg.tau_rho = 1e-3;
        cfg.tau_v = 1e-3;
        cfg.tau_theta = 1e-3;
        cfg.sigma = 1e-3;
        cfg.iters = 300_000;
        cfg.trace_every = 0;
        let t0 = Instant::now();
        let (_k, sol) =
            solve_inverse_kernel(&obs, &metric, &cfg, &init, &known, Some(truth.values())).unwrap();
        println!(
            "kernel gamma=1e{gamma_exp}: err={:.4} time={:.1}s",
            sol.final_theta_err.unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}

fn bregman_loop() {
    let spec = GridSpec::new(1, 50, 30, 1.0).unwrap();
    let truth = GroundMetricModel::from_fn(spec, EntryMaps::Scalar, |p| {
        1.0 - 0.6 * (std::f64::consts::PI * p[0]).sin().powi(2)
    })
    .unwrap();
    let obs = forward_obs(spec, &truth, EnergyModel::RunningCost(RunningCostF::quadratic()));
    let init = GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap();
    let known = [(0usize, truth.g0()[0])];
    for seed in [99u64, 12345u64, 2024u64, 31u64] {
        for inner in [0usize] {
            let noisy = inject_noise(&obs, 1.0, seed);
            let mut cfg = SolverConfig::standard(&noisy);
            cfg.gamma = 1e-2;
            cfg.iters = 60_000;
            cfg.trace_every = 0;
            let bcfg = BregmanConfig { outer_iters: 7, inner_iters: inner, warm_start: true };
            let t0 = Instant::now();
            let (_m, outcome) = run_bregman_metric(
                &noisy,
                &RunningCostF::quadratic(),
                &cfg,
                &bcfg,
                &init,
                &known,
                Some(truth.g0()),
            )
            .unwrap();
            let errs: Vec<String> =
                outcome.rows.iter().map(|r| format!("{:.4}", r.theta_err.unwrap())).collect();
            println!(
                "seed={seed} inner={inner}: errs=[{}] time={:.1}s",
                errs.join(", "),
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

fn noisy_sweep() {
    let spec = GridSpec::new(1, 50, 30, 1.0).unwrap();
    let truth = GroundMetricModel::from_fn(spec, EntryMaps::Scalar, |p| {
        1.0 - 0.6 * (std::f64::consts::PI * p[0]).sin().powi(2)
    })
    .unwrap();
    let obs = forward_obs(spec, &truth, EnergyModel::RunningCost(RunningCostF::quadratic()));
    let init = GroundMetricModel::constant(spec, EntryMaps::Scalar, 1.0).unwrap();
    let known = [(0usize, truth.g0()[0])];
    for eps in [0.1, 0.4, 1.0] {
        let noisy = inject_noise(&obs, eps, 2024);
        let mut best = (f64::INFINITY, 0i32);
        for gamma_exp in [-8, -7, -6, -5, -4, -3] {
            let mut cfg = SolverConfig::standard(&noisy);
            cfg.gamma = 10f64.powi(gamma_exp);
            cfg.iters = 60_000;
            cfg.trace_every = 0;
            let (_m, sol) = solve_inverse_metric(
                &noisy,
                &RunningCostF::quadratic(),
                &cfg,
                &init,
                &known,
                Some(truth.g0()),
            )
            .unwrap();
            let e = sol.final_theta_err.unwrap();
            if e < best.0 {
                best = (e, gamma_exp);
            }
        }
        println!("eps={eps}: best err={:.4} at gamma=1e{}", best.0, best.1);
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "metric".into());
    match mode.as_str() {
        "metric" => metric_loop(),
        "kernel" => kernel_loop(),
        "bregman" => bregman_loop(),
        "noisy" => noisy_sweep(),
        other => eprintln!("unknown mode {other}"),
    }
}
