//! Experiment orchestration: forward solve -> noise injection -> inverse (or
//! Bregman) sweeps over the `γ` and `ε*` grids, with all artifacts written
//! as CSV plus a machine-readable JSON summary.
//!
//! The pipeline is a pure function of (config, seed): rerunning with the
//! same inputs produces byte-identical artifacts. Sweep points run in
//! parallel (capped by `MFGINV_THREADS`); the summary is assembled in sweep
//! order, so the artifacts do not depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bregman::{run_bregman_kernel, run_bregman_metric};
use crate::config::{ExperimentConfig, ProblemKind};
use crate::error::{Error, Result};
use crate::fields::{
    GroundMetricModel, InteractionKernel, RunningCostF,
};
use crate::forward::{make_boundary, solve_forward, EnergyModel, ForwardProblem};
use crate::grid::GridSpec;
use crate::inverse::{
    solve_inverse_kernel, solve_inverse_metric, Observation, SolverConfig, TraceRow,
};
use crate::io;
use crate::noise::{inject_noise, RNG_ALGORITHM};

#[derive(Clone, Debug, Serialize)]
pub struct ForwardSummary {
    /// Scaling applied to the running-cost functional in the objective.
    pub potential_scaling: String,
    pub converged: bool,
    pub iters: usize,
    pub kkt_residual: f64,
    pub r_hje: f64,
    pub r_cont: f64,
    pub r_curl: f64,
    pub r_loop: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub eps_star: f64,
    pub gamma: f64,
    pub dir: String,
    pub obj: f64,
    pub misfit_rho: f64,
    pub misfit_v: f64,
    pub reg: f64,
    pub r_hje: f64,
    pub r_cont: f64,
    pub r_curl: f64,
    pub r_loop: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_err: Option<f64>,
    /// θ-error per outer iteration when the Bregman stage ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bregman_theta_errs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub problem: ProblemKind,
    pub dim: usize,
    pub m: usize,
    pub n: usize,
    pub horizon: f64,
    pub rng_algorithm: &'static str,
    pub seed: u64,
    pub forward: ForwardSummary,
    pub sweeps: Vec<SweepSummary>,
}

pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Describe what a config would run, without writing anything.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let cfg = cfg.resolve()?;
    let spec = cfg.spec()?;
    let eps = cfg.eps_star.clone().unwrap_or_default();
    let gammas = cfg.gammas.clone().unwrap_or_default();
    let mut out = vec![
        format!(
            "grid: dim={} m={} n={} T={}",
            spec.dim, spec.m, spec.n, spec.horizon
        ),
        format!("problem: {:?}", cfg.problem.unwrap()),
        format!("forward solve -> observations"),
        format!(
            "sweep: {} noise level(s) x {} gamma value(s) = {} solve(s){}",
            eps.len(),
            gammas.len(),
            eps.len() * gammas.len(),
            if cfg.bregman.is_some() { " (bregman stage)" } else { "" }
        ),
    ];
    for e in &eps {
        for g in &gammas {
            out.push(format!("  {}", sweep_dir(*e, *g)));
        }
    }
    Ok(out)
}

fn sweep_dir(eps: f64, gamma: f64) -> String {
    format!("eps-{}_gamma-{:e}", eps, gamma)
}

struct SweepResult {
    summary: SweepSummary,
    files: Vec<(PathBuf, FileKind)>,
}

enum FileKind {
    Metric(GroundMetricModel),
    Kernel(InteractionKernel),
    KernelSlice(InteractionKernel),
    Table { header: String, rows: Vec<Vec<String>> },
}

/// Run the full experiment; returns the artifact directory and summary.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<PipelineOutcome> {
    let mut cfg = cfg.resolve()?;
    if let Some(seed) = seed_override {
        cfg.seed = Some(seed);
    }
    let seed = cfg.seed.unwrap_or(7);
    let dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into())));
    fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_stage("setup"))?;

    let echo = serde_json::to_string_pretty(&cfg)
        .map_err(|e| Error::Config(e.to_string()).in_stage("setup"))?;
    fs::write(dir.join("config.resolved.json"), echo + "\n")
        .map_err(|e| Error::from(e).in_stage("setup"))?;

    let spec = cfg.spec()?;
    let problem_kind = cfg.problem.unwrap();
    let metric = cfg.metric_model().map_err(|e| e.in_stage("setup"))?;
    let boundary = cfg.boundary.clone().unwrap();
    let rho0 = make_boundary(&boundary.rho0, &spec).map_err(|e| e.in_stage("setup"))?;
    let rho_term = make_boundary(&boundary.rho_term, &spec).map_err(|e| e.in_stage("setup"))?;

    let (energy, kernel_truth) = match problem_kind {
        ProblemKind::Metric => (EnergyModel::RunningCost(RunningCostF::quadratic()), None),
        ProblemKind::Kernel => {
            let k = cfg.kernel_truth().map_err(|e| e.in_stage("setup"))?;
            (EnergyModel::Interaction(k.clone()), Some(k))
        }
    };

    // Forward stage: generate the clean observations.
    let fproblem = ForwardProblem {
        spec,
        rho0,
        rho_term,
        metric: metric.clone(),
        energy,
    };
    let fcfg = cfg.forward.unwrap_or_default();
    let fsol = solve_forward(&fproblem, &fcfg).map_err(|e| e.in_stage("forward"))?;
    let fdir = dir.join("forward");
    fs::create_dir_all(&fdir).map_err(|e| Error::from(e).in_stage("forward"))?;
    io::write_cell_field(&fdir.join("rho.csv"), &fsol.state.rho)
        .map_err(|e| e.in_stage("forward"))?;
    io::write_face_field(&fdir.join("vel.csv"), &fsol.state.vel)
        .map_err(|e| e.in_stage("forward"))?;
    let diag_rows: Vec<Vec<String>> = fsol
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
    io::write_table(
        &fdir.join("diagnostics.csv"),
        &spec,
        "iter,obj,r_cont,r_hje,r_curl,r_loop",
        &diag_rows,
    )
    .map_err(|e| e.in_stage("forward"))?;

    let clean = Observation::from_state(&fsol.state);
    let eps_list = cfg.eps_star.clone().unwrap();
    let gammas = cfg.gammas.clone().unwrap();

    // The sweep over (ε*, γ) pairs; points are independent and may run in
    // parallel, the result order is fixed by the index.
    let points: Vec<(usize, f64, f64)> = eps_list
        .iter()
        .enumerate()
        .flat_map(|(ei, &e)| gammas.iter().map(move |&g| (ei, e, g)))
        .collect();

    let run_point = |&(ei, eps, gamma): &(usize, f64, f64)| -> Result<SweepResult> {
        let stage = format!("invert {}", sweep_dir(eps, gamma));
        let noisy = inject_noise(&clean, eps, seed.wrapping_add(ei as u64));
        run_sweep_point(&cfg, &spec, problem_kind, &metric, kernel_truth.as_ref(), &noisy, eps, gamma, seed)
            .map_err(|e| e.in_stage(&stage))
    };

    let results: Vec<Result<SweepResult>> = maybe_parallel(&points, run_point);

    let mut sweeps = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        for (path, kind) in &r.files {
            let full = dir.join(path);
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent)?;
            }
            match kind {
                FileKind::Metric(m) => io::write_metric(&full, m)?,
                FileKind::Kernel(k) => io::write_kernel(&full, k)?,
                FileKind::KernelSlice(k) => {
                    let expanded = k.expand();
                    let rows: Vec<Vec<String>> = (0..spec.cells())
                        .map(|cell| {
                            let p = spec.cell_position(cell);
                            vec![p[0].to_string(), p[1].to_string(), expanded.row()[cell].to_string()]
                        })
                        .collect();
                    io::write_table(&full, &spec, "x,y,k_row", &rows)?;
                }
                FileKind::Table { header, rows } => io::write_table(&full, &spec, header, rows)?,
            }
        }
        sweeps.push(r.summary);
    }

    let fsys = fsol.system_residuals;
    let summary = Summary {
        problem: problem_kind,
        dim: spec.dim,
        m: spec.m,
        n: spec.n,
        horizon: spec.horizon,
        rng_algorithm: RNG_ALGORITHM,
        seed,
        forward: ForwardSummary {
            potential_scaling: format!("dx^-{}", spec.dim),
            converged: fsol.converged,
            iters: fsol.iters_run,
            kkt_residual: fsol.kkt_residual,
            r_hje: fsys.hje,
            r_cont: fsys.cont,
            r_curl: fsys.curl,
            r_loop: fsys.loop_sums,
        },
        sweeps,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(e.to_string()).in_stage("summary"))?;
    fs::write(dir.join("summary.json"), json + "\n")
        .map_err(|e| Error::from(e).in_stage("summary"))?;

    Ok(PipelineOutcome { dir, summary })
}

/// Run the closures over the points, in parallel when more than one worker
/// is allowed (`MFGINV_THREADS` caps the count).
fn maybe_parallel<T: Sync, R: Send>(
    points: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let threads = std::env::var("MFGINV_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1);
    match threads {
        Some(1) => points.iter().map(f).collect(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.min(points.len().max(1)))
                .build()
                .expect("thread pool");
            pool.install(|| {
                use rayon::prelude::*;
                points.par_iter().map(|p| f(p)).collect()
            })
        }
        None => {
            use rayon::prelude::*;
            points.par_iter().map(|p| f(p)).collect()
        }
    }
}

fn trace_rows(trace: &[TraceRow]) -> Vec<Vec<String>> {
    trace
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
        .collect()
}

fn summary_from_trace(
    eps: f64,
    gamma: f64,
    dir: String,
    last: &TraceRow,
    theta_err: Option<f64>,
) -> SweepSummary {
    SweepSummary {
        eps_star: eps,
        gamma,
        dir,
        obj: last.obj,
        misfit_rho: last.misfit_rho,
        misfit_v: last.misfit_v,
        reg: last.reg,
        r_hje: last.residuals.hje,
        r_cont: last.residuals.cont,
        r_curl: last.residuals.curl,
        r_loop: last.residuals.loop_sums,
        theta_err,
        bregman_theta_errs: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_sweep_point(
    cfg: &ExperimentConfig,
    spec: &GridSpec,
    problem: ProblemKind,
    metric: &GroundMetricModel,
    kernel_truth: Option<&InteractionKernel>,
    noisy: &Observation,
    eps: f64,
    gamma: f64,
    seed: u64,
) -> Result<SweepResult> {
    let sub = PathBuf::from(sweep_dir(eps, gamma));
    let inv = cfg.inverse.clone().unwrap_or_default();
    let scfg: SolverConfig = inv.solver_config(noisy, gamma, seed);
    let theta_init = cfg.theta_init.unwrap_or(1.0);
    let mut files = Vec::new();

    match problem {
        ProblemKind::Metric => {
            let truth = metric.g0().to_vec();
            let pins = cfg.pinned_entries(&truth, spec)?;
            let init = GroundMetricModel::constant(*spec, metric.maps(), theta_init)?;
            let f = RunningCostF::quadratic();
            if let Some(bp) = &cfg.bregman {
                let (model, outcome) = run_bregman_metric(
                    noisy,
                    &f,
                    &scfg,
                    &bp.to_config(),
                    &init,
                    &pins,
                    Some(&truth),
                )?;
                let rows: Vec<Vec<String>> = outcome
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.outer.to_string(),
                            r.inner_iters.to_string(),
                            r.obj.to_string(),
                            io::fmt_opt(r.theta_err),
                        ]
                    })
                    .collect();
                files.push((
                    sub.join("bregman_trace.csv"),
                    FileKind::Table { header: "l,inner_iters,obj,theta_err_if_truth".into(), rows },
                ));
                for r in &outcome.rows {
                    let mut snap = init.clone();
                    snap.set_g0(&r.theta);
                    files.push((sub.join(format!("theta_{}.csv", r.outer)), FileKind::Metric(snap)));
                }
                files.push((sub.join("g0.csv"), FileKind::Metric(model.clone())));
                files.push((
                    sub.join("recovered_vs_truth.csv"),
                    FileKind::Table {
                        header: "x,truth,recovered".into(),
                        rows: recovered_rows(spec, &truth, model.g0()),
                    },
                ));
                let errs: Vec<f64> = outcome.rows.iter().filter_map(|r| r.theta_err).collect();
                let last_err = errs.last().copied();
                let mut summary = SweepSummary {
                    eps_star: eps,
                    gamma,
                    dir: sub.display().to_string(),
                    obj: outcome.rows.last().map(|r| r.obj).unwrap_or(f64::NAN),
                    misfit_rho: f64::NAN,
                    misfit_v: f64::NAN,
                    reg: f64::NAN,
                    r_hje: f64::NAN,
                    r_cont: f64::NAN,
                    r_curl: f64::NAN,
                    r_loop: f64::NAN,
                    theta_err: last_err,
                    bregman_theta_errs: Some(errs),
                };
                if let Some(last) = outcome.inner_traces.last().and_then(|t| t.last()) {
                    summary.misfit_rho = last.misfit_rho;
                    summary.misfit_v = last.misfit_v;
                    summary.reg = last.reg;
                    summary.r_hje = last.residuals.hje;
                    summary.r_cont = last.residuals.cont;
                    summary.r_curl = last.residuals.curl;
                    summary.r_loop = last.residuals.loop_sums;
                }
                Ok(SweepResult { summary, files })
            } else {
                let (model, sol) =
                    solve_inverse_metric(noisy, &f, &scfg, &init, &pins, Some(&truth))?;
                files.push((sub.join("g0.csv"), FileKind::Metric(model.clone())));
                files.push((
                    sub.join("trace.csv"),
                    FileKind::Table {
                        header: "iter,obj,misfit_rho,misfit_v,reg,r_hje,r_cont,r_curl,r_loop,g0_err_if_truth"
                            .into(),
                        rows: trace_rows(&sol.trace),
                    },
                ));
                files.push((
                    sub.join("recovered_vs_truth.csv"),
                    FileKind::Table {
                        header: "x,truth,recovered".into(),
                        rows: recovered_rows(spec, &truth, model.g0()),
                    },
                ));
                let last = sol.trace.last().expect("trace nonempty");
                Ok(SweepResult {
                    summary: summary_from_trace(
                        eps,
                        gamma,
                        sub.display().to_string(),
                        last,
                        sol.final_theta_err,
                    ),
                    files,
                })
            }
        }
        ProblemKind::Kernel => {
            let ktruth = kernel_truth.expect("kernel truth present");
            let truth = ktruth.values().to_vec();
            let pins = cfg.pinned_entries(&truth, spec)?;
            let init = InteractionKernel::from_values(
                *spec,
                vec![theta_init; InteractionKernel::qcells_for(spec)],
            )?;
            if let Some(bp) = &cfg.bregman {
                let (ktilde, outcome) = run_bregman_kernel(
                    noisy,
                    metric,
                    &scfg,
                    &bp.to_config(),
                    &init,
                    &pins,
                    Some(&truth),
                )?;
                let rows: Vec<Vec<String>> = outcome
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.outer.to_string(),
                            r.inner_iters.to_string(),
                            r.obj.to_string(),
                            io::fmt_opt(r.theta_err),
                        ]
                    })
                    .collect();
                files.push((
                    sub.join("bregman_trace.csv"),
                    FileKind::Table { header: "l,inner_iters,obj,theta_err_if_truth".into(), rows },
                ));
                for r in &outcome.rows {
                    let snap = InteractionKernel::from_values(*spec, r.theta.clone())?;
                    files.push((sub.join(format!("theta_{}.csv", r.outer)), FileKind::Kernel(snap)));
                }
                files.push((sub.join("ktilde.csv"), FileKind::Kernel(ktilde.clone())));
                files.push((sub.join("kernel_slice.csv"), FileKind::KernelSlice(ktilde.clone())));
                files.push((
                    sub.join("recovered_vs_truth.csv"),
                    FileKind::Table {
                        header: "q,truth,recovered".into(),
                        rows: quotient_rows(spec, &truth, ktilde.values()),
                    },
                ));
                let errs: Vec<f64> = outcome.rows.iter().filter_map(|r| r.theta_err).collect();
                let last_err = errs.last().copied();
                let mut summary = SweepSummary {
                    eps_star: eps,
                    gamma,
                    dir: sub.display().to_string(),
                    obj: outcome.rows.last().map(|r| r.obj).unwrap_or(f64::NAN),
                    misfit_rho: f64::NAN,
                    misfit_v: f64::NAN,
                    reg: f64::NAN,
                    r_hje: f64::NAN,
                    r_cont: f64::NAN,
                    r_curl: f64::NAN,
                    r_loop: f64::NAN,
                    theta_err: last_err,
                    bregman_theta_errs: Some(errs),
                };
                if let Some(last) = outcome.inner_traces.last().and_then(|t| t.last()) {
                    summary.misfit_rho = last.misfit_rho;
                    summary.misfit_v = last.misfit_v;
                    summary.reg = last.reg;
                    summary.r_hje = last.residuals.hje;
                    summary.r_cont = last.residuals.cont;
                    summary.r_curl = last.residuals.curl;
                    summary.r_loop = last.residuals.loop_sums;
                }
                Ok(SweepResult { summary, files })
            } else {
                let (ktilde, sol) =
                    solve_inverse_kernel(noisy, metric, &scfg, &init, &pins, Some(&truth))?;
                files.push((sub.join("ktilde.csv"), FileKind::Kernel(ktilde.clone())));
                files.push((sub.join("kernel_slice.csv"), FileKind::KernelSlice(ktilde.clone())));
                files.push((
                    sub.join("trace.csv"),
                    FileKind::Table {
                        header:
                            "iter,obj,misfit_rho,misfit_v,reg,r_hje,r_cont,r_curl,r_loop,ktilde_err_if_truth"
                                .into(),
                        rows: trace_rows(&sol.trace),
                    },
                ));
                files.push((
                    sub.join("recovered_vs_truth.csv"),
                    FileKind::Table {
                        header: "q,truth,recovered".into(),
                        rows: quotient_rows(spec, &truth, ktilde.values()),
                    },
                ));
                let last = sol.trace.last().expect("trace nonempty");
                Ok(SweepResult {
                    summary: summary_from_trace(
                        eps,
                        gamma,
                        sub.display().to_string(),
                        last,
                        sol.final_theta_err,
                    ),
                    files,
                })
            }
        }
    }
}

fn recovered_rows(spec: &GridSpec, truth: &[f64], recovered: &[f64]) -> Vec<Vec<String>> {
    (0..spec.cells())
        .map(|cell| {
            let p = spec.cell_position(cell);
            let x = if spec.dim == 1 {
                p[0].to_string()
            } else {
                format!("{};{}", p[0], p[1])
            };
            vec![x, truth[cell].to_string(), recovered[cell].to_string()]
        })
        .collect()
}

fn quotient_rows(spec: &GridSpec, truth: &[f64], recovered: &[f64]) -> Vec<Vec<String>> {
    let dx = spec.dx();
    let qdim = InteractionKernel::qdim_for(spec);
    (0..truth.len())
        .map(|q| {
            let x = if spec.dim == 1 {
                (q as f64 * dx).to_string()
            } else {
                format!("{};{}", (q / qdim) as f64 * dx, (q % qdim) as f64 * dx)
            };
            vec![x, truth[q].to_string(), recovered[q].to_string()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let json = r#"{
            "grid": {"dim": 1, "m": 12, "n": 8},
            "problem": "metric",
            "eps_star": [0.0, 0.3],
            "gammas": [1e-6, 1e-4],
            "forward": {"tol": 1e-8, "max_iters": 200000},
            "inverse": {"iters": 3000, "trace_every": 1000},
            "seed": 11
        }"#;
        serde_json::from_str::<ExperimentConfig>(json).unwrap().resolve().unwrap()
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let cfg = small_cfg();
        let base = std::env::temp_dir().join(format!("mfginv-pipe-{}", std::process::id()));
        let d1 = base.join("run1");
        let d2 = base.join("run2");
        let _ = fs::remove_dir_all(&base);
        let o1 = run_pipeline(&cfg, Some(&d1), None).unwrap();
        let o2 = run_pipeline(&cfg, Some(&d2), None).unwrap();
        assert_eq!(o1.summary.sweeps.len(), 4);

        // byte-identical artifacts
        let mut files1: Vec<PathBuf> = walk(&d1);
        files1.sort();
        assert!(files1.iter().any(|p| p.ends_with("summary.json")));
        for f in &files1 {
            let rel = f.strip_prefix(&d1).unwrap();
            let a = fs::read(f).unwrap();
            let b = fs::read(d2.join(rel)).unwrap_or_else(|_| panic!("missing {rel:?}"));
            assert_eq!(a, b, "artifact {rel:?} differs between runs");
        }
        // noiseless recovery beats noisy at the same gamma
        let s = &o1.summary.sweeps;
        assert!(s[0].theta_err.unwrap() < 0.2);
        let _ = fs::remove_dir_all(&base);
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn plan_is_dry() {
        let cfg = small_cfg();
        let lines = plan(&cfg).unwrap();
        assert!(lines.iter().any(|l| l.contains("4 solve(s)")));
    }
}
