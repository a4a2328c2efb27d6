#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hybrid_htf::config::RunConfig;
use hybrid_htf::excite;
use hybrid_htf::hss::{self, HarmonicTransferSet};
use hybrid_htf::pipeline::{self, CycleSummary};
use hybrid_htf::sim;
use hybrid_htf::Error;

#[derive(Parser)]
#[command(name = "hybrid-htf", version, about = "Harmonic transfer function identification of a hybrid oscillator")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration (or bare model parameters).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Curvature weight of the estimator.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Truncation order of the theoretical model.
    #[arg(long, global = true)]
    nh: Option<usize>,
    /// Integration and sampling step (s).
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Settle the limit cycle and write trajectories with a summary.
    Simulate {
        /// Length of the written trajectory from rest (s); defaults to the settling run.
        #[arg(long)]
        duration: Option<f64>,
        /// Also simulate the chirp experiments and write the record bundle.
        #[arg(long)]
        experiments: bool,
    },
    /// Evaluate the theoretical harmonic transfer functions.
    HtfTheory,
    /// Run chirp experiments, estimate the HTFs and fit stiffness and damping.
    Identify {
        /// Use a previously written record bundle instead of simulating.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Compare two HTF CSV files.
    Compare {
        candidate: PathBuf,
        reference: PathBuf,
        /// Relative magnitude tolerance.
        #[arg(long, default_value_t = 0.05)]
        rel_tol: f64,
        /// Phase tolerance (deg).
        #[arg(long, default_value_t = 5.0)]
        phase_tol: f64,
        /// Skip points within `exclude_width` of this frequency (rad/s).
        #[arg(long)]
        exclude: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        exclude_width: f64,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    OutOfTolerance,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn resolve(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    if let Some(alpha) = o.alpha {
        cfg.estimate.alpha = alpha;
    }
    if let Some(nh) = o.nh {
        cfg.theory.n_h = nh;
        cfg.theory.n_keep = cfg.theory.n_keep.min(nh);
    }
    if let Some(dt) = o.dt {
        cfg.sim.dt = dt;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    cfg.write_resolved(&cfg.out_dir)?;
    Ok(cfg)
}

fn write(path: &Path, text: String) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")
}

#[derive(Serialize)]
struct SimulateSummary {
    #[serde(flatten)]
    cycle: CycleSummary,
    samples_per_period: usize,
    trajectory_duration: f64,
}

fn simulate(cfg: &RunConfig, duration: Option<f64>, experiments: bool) -> Result<(), Failure> {
    let nominal = pipeline::settle(cfg)?;
    let period = cfg.model.period();
    let duration = duration.unwrap_or(cfg.sim.n_cycles as f64 * period);
    if !(duration > 0.0) {
        return Err(Failure::Config(format!("duration must be positive, got {duration}")));
    }
    let traj = sim::integrate(
        &nominal.model,
        sim::rest_start(&nominal.model),
        0.0,
        |_| 0.0,
        duration,
        cfg.sim.dt,
    )?;
    let out = &cfg.out_dir;
    traj.write_csv(out.join("trajectory.csv"))?;
    nominal.cycle.to_trajectory(&nominal.model).write_csv(out.join("cycle.csv"))?;
    if experiments {
        let records = pipeline::experiments(cfg, &nominal)?;
        excite::write_bundle(out.join("experiments"), &cfg.chirp_plan(), cfg.chirp.record_start, &records)?;
    }
    let summary = SimulateSummary {
        cycle: CycleSummary::of(&nominal.cycle),
        samples_per_period: nominal.cycle.samples_per_period(),
        trajectory_duration: duration,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "period {} s, duty {:.6}, t_hat {:.6} s, residual ({:.3e}, {:.3e})",
        summary.cycle.period, summary.cycle.duty, summary.cycle.t_hat, summary.cycle.residual[0], summary.cycle.residual[1]
    );
    Ok(())
}

#[derive(Serialize)]
struct TheorySummary {
    n_h: usize,
    n_keep: usize,
    duty: f64,
    t_hat: f64,
    peak_g0: f64,
    /// Largest `|G_n|` with `|n| > n_keep`, relative to the peak of `|G_0|`.
    beyond_keep_ratio: f64,
    /// Max-norm relative difference of each kept harmonic between the
    /// model truncated at `n_keep` and at `n_h`.
    truncation_diff: std::collections::BTreeMap<i32, f64>,
}

fn htf_theory(cfg: &RunConfig) -> Result<(), Failure> {
    let nominal = pipeline::settle(cfg)?;
    let grid = cfg.theory_grid();
    let full = hss::theoretical_htf(&nominal.lin, cfg.theory.n_h, &grid, cfg.theory.n_h)?;
    let out = &cfg.out_dir;
    full.write_csv(out.join("htf_theory.csv"))?;
    write(&out.join("htf_theory_plot.csv"), full.to_plot_csv())?;

    let keep = cfg.theory.n_keep as i32;
    let peak_g0 = full.max_abs(0);
    let beyond = full
        .harmonics
        .keys()
        .filter(|n| n.abs() > keep)
        .map(|&n| full.max_abs(n))
        .fold(0.0, f64::max);
    let reduced = hss::theoretical_htf(&nominal.lin, cfg.theory.n_keep, &grid, cfg.theory.n_keep)?;
    let mut truncation_diff = std::collections::BTreeMap::new();
    for n in -keep..=keep {
        truncation_diff.insert(n, pipeline::max_norm_relative_diff(&reduced, &full, &[n])?);
    }
    let summary = TheorySummary {
        n_h: cfg.theory.n_h,
        n_keep: cfg.theory.n_keep,
        duty: nominal.lin.duty,
        t_hat: nominal.lin.t_hat,
        peak_g0,
        beyond_keep_ratio: if peak_g0 > 0.0 { beyond / peak_g0 } else { 0.0 },
        truncation_diff,
    };
    write_json(&out.join("theory_summary.json"), &summary)?;
    println!(
        "peak |G_0| = {:.6e}; max |G_n| beyond n = {} is {:.3}% of it",
        summary.peak_g0,
        keep,
        100.0 * summary.beyond_keep_ratio
    );
    Ok(())
}

fn identify(cfg: &RunConfig, records: Option<&Path>) -> Result<(), Failure> {
    let id = match records {
        Some(dir) => {
            let nominal = pipeline::settle(cfg)?;
            let (_, recs) = excite::read_bundle(dir)?;
            pipeline::identify_records(cfg, nominal, recs)?
        }
        None => pipeline::identify(cfg)?,
    };
    let out = &cfg.out_dir;
    id.estimate.htf.write_csv(out.join("htf_estimate.csv"))?;
    write(&out.join("htf_estimate_plot.csv"), id.estimate.htf.to_plot_csv())?;
    id.estimate.diagnostics.write_json(out.join("estimate_diagnostics.json"))?;
    id.theory.write_csv(out.join("htf_theory_grid.csv"))?;
    let diffs = pipeline::diff_sets(&id.estimate.htf, &id.theory)?;
    write(&out.join("htf_diff.csv"), pipeline::diff_table_csv(&diffs))?;
    id.fit.write_json(out.join("fit.json"))?;
    for r in id.records.iter().filter(|r| r.large_perturbation) {
        eprintln!("warning: record {} leaves the small-perturbation regime", r.index);
    }
    println!(
        "k_hat = {:.6}, c_hat = {:.6}, objective = {:.3e}, converged = {}",
        id.fit.k_hat, id.fit.c_hat, id.fit.objective, id.fit.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    rel_tol: f64,
    phase_tol_deg: f64,
    excluded: Option<(f64, f64)>,
    harmonics: std::collections::BTreeMap<i32, pipeline::HarmonicSummary>,
    pass: bool,
}

fn compare(
    cfg: &RunConfig,
    candidate: &Path,
    reference: &Path,
    rel_tol: f64,
    phase_tol: f64,
    exclude: Option<f64>,
    exclude_width: f64,
) -> Result<(), Failure> {
    let a = HarmonicTransferSet::read_csv(candidate)?;
    let b = HarmonicTransferSet::read_csv(reference)?;
    let diffs = pipeline::diff_sets(&a, &b)?;
    let harmonics = pipeline::summarize(&diffs, rel_tol, phase_tol, |d| match exclude {
        Some(w) => (d.omega - w).abs() > exclude_width,
        None => true,
    });
    let pass = harmonics.values().all(|s| s.failing == 0);
    for (n, s) in &harmonics {
        println!(
            "n = {n:>3}: max rel mag {:.4e}, max phase {:.4} deg, {} / {} outside tolerance",
            s.max_rel_mag, s.max_phase_deg, s.failing, s.points
        );
    }
    let report = CompareReport {
        rel_tol,
        phase_tol_deg: phase_tol,
        excluded: exclude.map(|w| (w, exclude_width)),
        harmonics,
        pass,
    };
    write_json(&cfg.out_dir.join("compare.json"), &report)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::OutOfTolerance)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli.overrides)?;
    match cli.command {
        Command::Simulate { duration, experiments } => simulate(&cfg, duration, experiments),
        Command::HtfTheory => htf_theory(&cfg),
        Command::Identify { records } => identify(&cfg, records.as_deref()),
        Command::Compare {
            candidate,
            reference,
            rel_tol,
            phase_tol,
            exclude,
            exclude_width,
        } => compare(&cfg, &candidate, &reference, rel_tol, phase_tol, exclude, exclude_width),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::OutOfTolerance) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
