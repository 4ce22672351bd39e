//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use jacspec::pruning::{PruningMethod, PruningSpec, Scaling, TopR};
use jacspec::randomness::{make_rng, sample_gaussian_matrix};

use crate::approx::{run_approx_verification, write_approx_csv, ApproxPlan};
use crate::conditions::{run_condition_check, write_condition_csv};
use crate::config::{ExperimentConfig, Kind};
use crate::error::{HarnessError, Result};
use crate::fit::fit_groups;
use crate::manifest::{checkpoint_path, now_unix_ms, write_atomic, write_manifest, Manifest};
use crate::rows::{fmt_real, read_csv, write_csv};
use crate::sweep::{run_sweep, RunOptions, SweepPlan};

pub const THREADS_ENV: &str = "JACSPEC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "jacspec", version, about = "Jacobian spectral-norm experiments for deep ReLU networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). JACSPEC_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Record wall-clock time per task instead of 0.
    #[arg(long, global = true)]
    pub timing: bool,
    /// Reuse tasks finished by an interrupted run with the same output path.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Depth sweep over σ_w² with i.i.d. Gaussian weights.
    Sweep,
    /// Depth sweep with pruned hidden layers.
    PruneSweep,
    /// Depth sweep with correlated weights.
    CorrSweep,
    /// Activation-frequency, χ² and sign-statistic checks.
    VerifyApprox,
    /// Monte Carlo estimates of the stability conditions.
    CheckConditions,
    /// Fit growth rates per treatment in a sweep CSV.
    Fit(FitArgs),
    /// Closed-form and calibrated scale factors for one pruning method.
    ScaleFactor(ScaleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sweep CSV to fit.
    pub csv: PathBuf,
    #[arg(long, default_value_t = jacspec::diagnostics::DEFAULT_WINDOW_MIN)]
    pub window_min: usize,
    #[arg(long)]
    pub window_max: Option<usize>,
    #[arg(long, default_value_t = jacspec::diagnostics::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("jacspec: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(global: &GlobalArgs, cfg: Option<&ExperimentConfig>) -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return v.trim().parse().map_err(|_| HarnessError::Config(format!("{THREADS_ENV}={v:?} is not a count")));
    }
    Ok(global.threads.or(cfg.and_then(|c| c.threads)).unwrap_or(0))
}

fn load_config(global: &GlobalArgs, expected: Kind) -> Result<ExperimentConfig> {
    let path = global.config.as_ref().ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    if cfg.kind != expected {
        return Err(HarnessError::Config(format!(
            "config kind {} does not match this subcommand ({})",
            cfg.kind.as_str(),
            expected.as_str()
        )));
    }
    Ok(cfg)
}

fn out_path(global: &GlobalArgs, cfg: &ExperimentConfig) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.experiment_id)))
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let say = |msg: String| {
        if !g.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Sweep => sweep(g, Kind::DepthSweep, &say),
        Command::PruneSweep => sweep(g, Kind::PruneSweep, &say),
        Command::CorrSweep => sweep(g, Kind::CorrSweep, &say),
        Command::VerifyApprox => {
            let cfg = load_config(g, Kind::ApproxVerify)?;
            let seed = g.seed.or(cfg.master_seed).unwrap_or(0);
            let threads = thread_count(g, Some(&cfg))?;
            let out = out_path(g, &cfg);
            let started = now_unix_ms();
            let plan = ApproxPlan::from_config(&cfg)?;
            let report = run_approx_verification(&plan, seed, threads)?;
            write_atomic(&out, |w| write_approx_csv(w, &plan, &report))?;
            let mut m = Manifest::new(&cfg, seed, threads, started);
            m.row_count = std::fs::read_to_string(&out)?.lines().count() - 1;
            m.finished_unix_ms = now_unix_ms();
            m.summary = serde_json::json!({
                "pooled_fraction": report.pooled_fraction,
                "ks_p_uniform": report.ks_p_uniform,
                "ks_critical_1pct": report.ks_critical_1pct,
                "corr_tw_td": report.corr_tw_td,
                "corr_tw_td_prev": report.corr_tw_td_prev,
            });
            write_manifest(&out, &m)?;
            println!("pooled_fraction {}", fmt_real(report.pooled_fraction));
            println!("ks_p_uniform {} (1% critical {})", fmt_real(report.ks_p_uniform), fmt_real(report.ks_critical_1pct));
            println!("corr_tw_td {}", fmt_real(report.corr_tw_td));
            println!("corr_tw_td_prev {}", fmt_real(report.corr_tw_td_prev));
            say(format!("wrote {}", out.display()));
            Ok(())
        }
        Command::CheckConditions => {
            let cfg = load_config(g, Kind::ConditionCheck)?;
            let seed = g.seed.or(cfg.master_seed).unwrap_or(0);
            let out = out_path(g, &cfg);
            let started = now_unix_ms();
            let rows = run_condition_check(&cfg, seed)?;
            write_atomic(&out, |w| write_condition_csv(w, &cfg.experiment_id, &rows))?;
            let mut m = Manifest::new(&cfg, seed, 1, started);
            m.row_count = rows.len() * 5;
            m.finished_unix_ms = now_unix_ms();
            write_manifest(&out, &m)?;
            write_condition_csv(std::io::stdout().lock(), &cfg.experiment_id, &rows)?;
            say(format!("wrote {}", out.display()));
            Ok(())
        }
        Command::Fit(a) => {
            let f = File::open(&a.csv).map_err(|e| HarnessError::Config(format!("{}: {e}", a.csv.display())))?;
            let rows = read_csv(BufReader::new(f))?;
            let fits = fit_groups(&rows, (a.window_min, a.window_max), a.epsilon)?;
            let mut stdout = std::io::stdout().lock();
            for gf in fits {
                writeln!(
                    stdout,
                    "{} slope={} intercept={} residual_rms={} window={}..={} verdict={}",
                    gf.key,
                    fmt_real(gf.fit.slope),
                    fmt_real(gf.fit.intercept),
                    fmt_real(gf.fit.residual_rms),
                    gf.fit.depth_window.0,
                    gf.fit.depth_window.1,
                    gf.verdict.class
                )?;
            }
            Ok(())
        }
        Command::ScaleFactor(a) => scale_factor(a, g.seed.unwrap_or(0)),
    }
}

fn sweep(g: &GlobalArgs, kind: Kind, say: &dyn Fn(String)) -> Result<()> {
    let cfg = load_config(g, kind)?;
    let seed = g.seed.or(cfg.master_seed).unwrap_or(0);
    let threads = thread_count(g, Some(&cfg))?;
    let out = out_path(g, &cfg);
    let plan = SweepPlan::from_config(&cfg)?;
    let ckpt = checkpoint_path(&out);
    if !g.resume && ckpt.exists() {
        std::fs::remove_file(&ckpt)?;
    }
    say(format!("{}: {} tasks, threads={}", cfg.experiment_id, plan.task_count(), threads));
    let started = now_unix_ms();
    let opts = RunOptions { master_seed: seed, threads, timing: g.timing };
    let result = run_sweep(&plan, &opts, Some(&ckpt))?;
    write_atomic(&out, |w| write_csv(w, &result.rows))?;
    let mut m = Manifest::new(&cfg, seed, threads, started);
    m.row_count = result.rows.len();
    m.finished_unix_ms = now_unix_ms();
    if !result.scales.is_empty() {
        m.summary = serde_json::json!({ "scales": result.scales });
        for s in &result.scales {
            say(format!(
                "{} {} sparsity={} analytic={} calibrated={} ratio={}",
                s.method,
                s.scaling_mode,
                fmt_real(s.sparsity),
                fmt_real(s.mean_analytic),
                fmt_real(s.mean_calibrated),
                fmt_real(s.mean_ratio)
            ));
        }
    }
    write_manifest(&out, &m)?;
    std::fs::remove_file(&ckpt)?;
    say(format!("wrote {} rows to {}", result.rows.len(), out.display()));
    Ok(())
}

fn scale_factor(a: &ScaleArgs, seed: u64) -> Result<()> {
    let method = match a.method.as_str() {
        "random" => PruningMethod::Random { sparsity: a.s.ok_or_else(|| HarnessError::Config("--s is required".into()))? },
        "magnitude_threshold" => {
            PruningMethod::MagnitudeThreshold { t: a.t.ok_or_else(|| HarnessError::Config("--t is required".into()))? }
        }
        "magnitude_top_r" => {
            PruningMethod::MagnitudeTopR(TopR::Count(a.r.ok_or_else(|| HarnessError::Config("--r is required".into()))?))
        }
        other => return Err(HarnessError::Config(format!("unknown method {other:?}"))),
    };
    let spec = PruningSpec { method, scaling: Scaling::Analytic };
    spec.validate(a.n).map_err(|e| HarnessError::Config(e.to_string()))?;
    let w = sample_gaussian_matrix::<f64>(&mut make_rng(seed, 0), a.n, a.n, 2.0 / a.n as f64)?;
    let p = spec.apply(&mut make_rng(seed, 1), &w)?;
    let r = &p.report;
    println!("analytic {}", fmt_real(r.analytic));
    println!("calibrated {}", fmt_real(r.calibrated));
    println!("ratio {}", fmt_real(r.ratio));
    if let Some(t) = p.threshold {
        println!("threshold {}", fmt_real(t));
    }
    println!("kept {}", p.mask.kept_count());
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
