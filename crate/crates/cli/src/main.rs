//! `mfginv`: solve discrete mean-field games on the torus and reconstruct
//! the ground metric or the interaction kernel from observed trajectories.
//!
//! Exit codes: 0 ok, 2 config error, 3 solver abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfginv_core::config::{load_config, ExperimentConfig, ProblemKind};
use mfginv_core::error::Error;
use mfginv_core::fields::{GroundMetricModel, InteractionKernel, RunningCostF};
use mfginv_core::forward::{make_boundary, solve_forward, ForwardProblem};
use mfginv_core::forward::EnergyModel;
use mfginv_core::inverse::{solve_inverse_kernel, solve_inverse_metric, Observation};
use mfginv_core::noise::inject_noise;
use mfginv_core::pipeline::{plan, run_pipeline};
use mfginv_core::{io, Result};

#[derive(Parser)]
#[command(name = "mfginv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); see the shipped presets.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the execution plan and write nothing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Metric,
    Kernel,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem; emits rho.csv, vel.csv, diagnostics.csv.
    Forward(Common),
    /// Recover the metric kernel g0; emits g0.csv, trace.csv.
    InvertMetric {
        #[command(flatten)]
        common: Common,
        /// Observed density file (generated by `forward` when omitted).
        #[arg(long)]
        rho: Option<PathBuf>,
        /// Observed velocity file.
        #[arg(long)]
        vel: Option<PathBuf>,
    },
    /// Recover the interaction kernel; emits ktilde.csv, kernel_slice.csv,
    /// trace.csv.
    InvertKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<PathBuf>,
        #[arg(long)]
        vel: Option<PathBuf>,
    },
    /// Outer Bregman iteration; emits theta_<l>.csv per outer step and
    /// bregman_trace.csv.
    Bregman {
        #[command(flatten)]
        common: Common,
        /// Which parameter to recover (overrides the config's problem).
        #[arg(long)]
        target: Option<Target>,
        /// Number of outer iterations.
        #[arg(long)]
        outer: Option<usize>,
    },
    /// Full experiment: forward -> noise -> inverse/Bregman sweeps ->
    /// summary.json.
    Pipeline(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Forward(c) => cmd_forward(&c),
        Command::InvertMetric { common, rho, vel } => {
            cmd_invert(&common, rho.as_deref(), vel.as_deref(), Some(Target::Metric))
        }
        Command::InvertKernel { common, rho, vel } => {
            cmd_invert(&common, rho.as_deref(), vel.as_deref(), Some(Target::Kernel))
        }
        Command::Bregman { common, target, outer } => cmd_bregman(&common, target, outer),
        Command::Pipeline(c) => cmd_pipeline(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::GridMismatch { .. } => 2,
        Error::NonFinite { .. } => 3,
        Error::Stage { source, .. } => exit_code(source),
        Error::InvalidParameter(_) => 2,
        _ => 1,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into()))
}

fn cmd_forward(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    if common.dry_run {
        for line in plan(&cfg)?.into_iter().take(3) {
            println!("{line}");
        }
        return Ok(());
    }
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let sol = run_forward(&cfg)?;
    io::write_cell_field(&dir.join("rho.csv"), &sol.state.rho)?;
    io::write_face_field(&dir.join("vel.csv"), &sol.state.vel)?;
    let rows: Vec<Vec<String>> = sol
        .diagnostics
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                r.obj.to_string(),
                r.r_cont.to_string(),
                r.r_hje.to_string(),
                r.r_curl.to_string(),
                r.r_loop.to_string(),
            ]
        })
        .collect();
    io::write_table(&dir.join("diagnostics.csv"), &cfg.spec()?, "iter,obj,r_cont,r_hje,r_curl,r_loop", &rows)?;
    println!(
        "forward: converged={} iters={} kkt={:e} -> {}",
        sol.converged,
        sol.iters_run,
        sol.kkt_residual,
        dir.display()
    );
    Ok(())
}

fn run_forward(cfg: &ExperimentConfig) -> Result<mfginv_core::forward::ForwardSolution> {
    let spec = cfg.spec()?;
    let metric = cfg.metric_model()?;
    let boundary = cfg.boundary.clone().expect("resolved config");
    let energy = match cfg.problem.expect("resolved config") {
        ProblemKind::Metric => EnergyModel::RunningCost(RunningCostF::quadratic()),
        ProblemKind::Kernel => EnergyModel::Interaction(cfg.kernel_truth()?),
    };
    let problem = ForwardProblem {
        spec,
        rho0: make_boundary(&boundary.rho0, &spec)?,
        rho_term: make_boundary(&boundary.rho_term, &spec)?,
        metric,
        energy,
    };
    solve_forward(&problem, &cfg.forward.unwrap_or_default()).map_err(|e| e.in_stage("forward"))
}

/// Observation from files when provided, otherwise a forward solve plus the
/// first configured noise level.
fn observation(
    cfg: &ExperimentConfig,
    rho: Option<&Path>,
    vel: Option<&Path>,
) -> Result<Observation> {
    let spec = cfg.spec()?;
    match (rho, vel) {
        (Some(r), Some(v)) => {
            Observation::new(io::read_cell_field(r, &spec)?, io::read_face_field(v, &spec)?)
        }
        (None, None) => {
            let sol = run_forward(cfg)?;
            let clean = Observation::from_state(&sol.state);
            let eps = cfg.eps_star.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.0);
            Ok(inject_noise(&clean, eps, cfg.seed.unwrap_or(7)))
        }
        _ => Err(Error::Config("provide both --rho and --vel, or neither".into())),
    }
}

fn cmd_invert(
    common: &Common,
    rho: Option<&Path>,
    vel: Option<&Path>,
    target: Option<Target>,
) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(t) = target {
        cfg.problem = Some(match t {
            Target::Metric => ProblemKind::Metric,
            Target::Kernel => ProblemKind::Kernel,
        });
        cfg = cfg.resolve()?;
    }
    if common.dry_run {
        for line in plan(&cfg)? {
            println!("{line}");
        }
        return Ok(());
    }
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let spec = cfg.spec()?;
    let obs = observation(&cfg, rho, vel)?;
    let gamma = cfg.gammas.as_ref().and_then(|g| g.first().copied()).unwrap_or(1e-4);
    let inv = cfg.inverse.clone().unwrap_or_default();
    let scfg = inv.solver_config(&obs, gamma, cfg.seed.unwrap_or(7));
    let theta_init = cfg.theta_init.unwrap_or(1.0);

    match cfg.problem.expect("resolved") {
        ProblemKind::Metric => {
            let metric = cfg.metric_model()?;
            let truth = metric.g0().to_vec();
            let pins = cfg.pinned_entries(&truth, &spec)?;
            let init = GroundMetricModel::constant(spec, metric.maps(), theta_init)?;
            let (model, sol) = solve_inverse_metric(
                &obs,
                &RunningCostF::quadratic(),
                &scfg,
                &init,
                &pins,
                Some(&truth),
            )
            .map_err(|e| e.in_stage("invert-metric"))?;
            io::write_metric(&dir.join("g0.csv"), &model)?;
            write_trace(&dir.join("trace.csv"), &spec, &sol.trace, "g0_err_if_truth")?;
            println!(
                "invert-metric: gamma={gamma:e} err={} -> {}",
                sol.final_theta_err.map(|e| e.to_string()).unwrap_or_default(),
                dir.display()
            );
        }
        ProblemKind::Kernel => {
            let metric = cfg.metric_model()?;
            let ktruth = cfg.kernel_truth()?;
            let truth = ktruth.values().to_vec();
            let pins = cfg.pinned_entries(&truth, &spec)?;
            let init = InteractionKernel::from_values(
                spec,
                vec![theta_init; InteractionKernel::qcells_for(&spec)],
            )?;
            let (ktilde, sol) =
                solve_inverse_kernel(&obs, &metric, &scfg, &init, &pins, Some(&truth))
                    .map_err(|e| e.in_stage("invert-kernel"))?;
            io::write_kernel(&dir.join("ktilde.csv"), &ktilde)?;
            let expanded = ktilde.expand();
            let rows: Vec<Vec<String>> = (0..spec.cells())
                .map(|cell| {
                    let p = spec.cell_position(cell);
                    vec![p[0].to_string(), p[1].to_string(), expanded.row()[cell].to_string()]
                })
                .collect();
            io::write_table(&dir.join("kernel_slice.csv"), &spec, "x,y,k_row", &rows)?;
            write_trace(&dir.join("trace.csv"), &spec, &sol.trace, "ktilde_err_if_truth")?;
            println!(
                "invert-kernel: gamma={gamma:e} err={} -> {}",
                sol.final_theta_err.map(|e| e.to_string()).unwrap_or_default(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn write_trace(
    path: &Path,
    spec: &mfginv_core::grid::GridSpec,
    trace: &[mfginv_core::inverse::TraceRow],
    err_col: &str,
) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                r.obj.to_string(),
                r.misfit_rho.to_string(),
                r.misfit_v.to_string(),
                r.reg.to_string(),
                r.residuals.hje.to_string(),
                r.residuals.cont.to_string(),
                r.residuals.curl.to_string(),
                r.residuals.loop_sums.to_string(),
                io::fmt_opt(r.theta_err),
            ]
        })
        .collect();
    io::write_table(
        path,
        spec,
        &format!("iter,obj,misfit_rho,misfit_v,reg,r_hje,r_cont,r_curl,r_loop,{err_col}"),
        &rows,
    )
}

fn cmd_bregman(common: &Common, target: Option<Target>, outer: Option<usize>) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(t) = target {
        cfg.problem = Some(match t {
            Target::Metric => ProblemKind::Metric,
            Target::Kernel => ProblemKind::Kernel,
        });
    }
    let mut bp = cfg.bregman.clone().unwrap_or_default();
    if let Some(n) = outer {
        bp.outer_iters = n;
    }
    cfg.bregman = Some(bp);
    let cfg = cfg.resolve()?;
    if common.dry_run {
        for line in plan(&cfg)? {
            println!("{line}");
        }
        return Ok(());
    }
    let outcome = run_pipeline(&cfg, common.out.as_deref(), None)?;
    println!("bregman: {} sweep point(s) -> {}", outcome.summary.sweeps.len(), outcome.dir.display());
    Ok(())
}

fn cmd_pipeline(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    if common.dry_run {
        for line in plan(&cfg)? {
            println!("{line}");
        }
        return Ok(());
    }
    let outcome = run_pipeline(&cfg, common.out.as_deref(), None)?;
    let best = outcome
        .summary
        .sweeps
        .iter()
        .filter_map(|s| s.theta_err.map(|e| (e, s.gamma, s.eps_star)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((err, gamma, eps)) => println!(
            "pipeline: {} sweep point(s), best theta_err={err:.6} at gamma={gamma:e} eps={eps} -> {}",
            outcome.summary.sweeps.len(),
            outcome.dir.display()
        ),
        None => println!(
            "pipeline: {} sweep point(s) -> {}",
            outcome.summary.sweeps.len(),
            outcome.dir.display()
        ),
    }
    Ok(())
}
