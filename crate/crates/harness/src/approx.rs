//! Checks of the Bernoulli activation model: activation frequencies,
//! pairwise χ² independence tests and the weight/activation sign statistics.
//!
//! `D_l` only depends on layers `1..=l`, so every network here is sampled up
//! to layer `l` and no further; the configured total depth `L` is recorded
//! but does not change any statistic.

use std::io::Write;

use jacspec::diagnostics::{
    activation_weight_stats, bernoulli_fraction_of, chi2_independence, ks_critical_1pct, ks_uniform, pearson_corr,
    ContingencyTable2x2,
};
use jacspec::network::{forward, synthetic_input, ForwardTrace};
use jacspec::randomness::{make_rng, sample_gaussian_matrix, stream_id};
use jacspec::{MlpConfig, Weights};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};
use crate::error::{HarnessError, Result};
use crate::rows::fmt_real;
use crate::sweep::{with_threads, INPUT_STREAM};

pub const APPROX_HEADER: &str = "experiment_id,part,index,n,L,layer,statistic,value";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxPlan {
    pub experiment_id: String,
    pub n: usize,
    pub depth: usize,
    pub layer: usize,
    pub seeds: usize,
    pub stats_n: usize,
    pub stats_seeds: usize,
    pub chi2_tables: usize,
    pub chi2_samples: usize,
}

impl ApproxPlan {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != Kind::ApproxVerify {
            return Err(HarnessError::Config(format!("{} is not approx_verify", cfg.kind.as_str())));
        }
        Ok(Self {
            experiment_id: cfg.experiment_id.clone(),
            n: cfg.n,
            depth: cfg.max_depth(),
            layer: cfg.layer(),
            seeds: cfg.seeds,
            stats_n: cfg.stats_n(),
            stats_seeds: cfg.stats_seeds(),
            chi2_tables: cfg.chi2_tables(),
            chi2_samples: cfg.chi2_samples(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ApproxReport {
    pub pooled_fraction: f64,
    pub min_entry_fraction: f64,
    pub max_entry_fraction: f64,
    pub bernoulli_samples: usize,
    pub chi2: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ks_p_uniform: f64,
    pub ks_critical_1pct: f64,
    pub t_w: Vec<f64>,
    pub t_d: Vec<f64>,
    /// `T_D` of `D_{l−1}`, the activation pattern that multiplies `W_l` in the
    /// Jacobian factor.
    pub t_d_prev: Vec<f64>,
    pub corr_tw_td: f64,
    pub corr_tw_td_prev: f64,
}

/// Critical i.i.d. network of depth `layer`, forward pass on a synthetic input.
fn trace_to_layer(experiment: &str, master_seed: u64, index: u64, n: usize, layer: usize) -> Result<(Weights, ForwardTrace<f64>)> {
    let rng = |l: u64| make_rng(master_seed, stream_id(experiment, index, l));
    let cfg = MlpConfig::new(n, n, layer)?;
    let v = 2.0 / n as f64;
    let w = Weights::sample(&cfg, v, || rng(0), |l| rng(l as u64), |r| sample_gaussian_matrix(r, n, n, v))?;
    let x = synthetic_input::<f64>(&mut rng(INPUT_STREAM), n);
    let trace = forward(&cfg, &w, &x)?;
    Ok((w, trace))
}

pub fn run_approx_verification(plan: &ApproxPlan, master_seed: u64, threads: usize) -> Result<ApproxReport> {
    with_threads(threads, || run_inner(plan, master_seed))?
}

fn run_inner(plan: &ApproxPlan, ms: u64) -> Result<ApproxReport> {
    let l = plan.layer;
    let bern_id = format!("{}/bernoulli", plan.experiment_id);
    let indicators: Vec<Vec<bool>> = (0..plan.seeds)
        .into_par_iter()
        .map(|s| Ok(trace_to_layer(&bern_id, ms, s as u64, plan.n, l)?.1.indicators.swap_remove(l)))
        .collect::<Result<_>>()?;
    let frac = bernoulli_fraction_of(indicators.iter().map(|v| Some(v.as_slice())), l)?;

    let pair_id = format!("{}/pairs", plan.experiment_id);
    let stats: Vec<(f64, f64, f64)> = (0..plan.stats_seeds)
        .into_par_iter()
        .map(|s| {
            let (w, trace) = trace_to_layer(&pair_id, ms, s as u64, plan.stats_n, l)?;
            let (t_w, t_d) = activation_weight_stats(&w.hidden[l - 1], &trace, l)?;
            let (_, t_prev) = activation_weight_stats(&w.hidden[l - 1], &trace, l - 1)?;
            Ok((t_w, t_d, t_prev))
        })
        .collect::<Result<_>>()?;
    let t_w: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let t_d: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let t_d_prev: Vec<f64> = stats.iter().map(|s| s.2).collect();

    let chi_id = format!("{}/chi2", plan.experiment_id);
    let pick_id = format!("{}/chi2-pick", plan.experiment_id);
    let tables: Vec<(f64, f64)> = (0..plan.chi2_tables)
        .into_par_iter()
        .map(|t| {
            let mut pick = make_rng(ms, stream_id(&pick_id, t as u64, 0));
            let i = pick.below(plan.stats_n as u64) as usize;
            let j = loop {
                let j = pick.below(plan.stats_n as u64) as usize;
                if j != i || plan.stats_n == 1 {
                    break j;
                }
            };
            let mut pairs = Vec::with_capacity(plan.chi2_samples);
            for s in 0..plan.chi2_samples {
                let index = (t * plan.chi2_samples + s) as u64;
                let (_, trace) = trace_to_layer(&chi_id, ms, index, plan.stats_n, l)?;
                pairs.push((trace.indicators[l][i], trace.indicators[l][j]));
            }
            let table = ContingencyTable2x2::from_pairs(pairs);
            match chi2_independence(&table) {
                Ok(r) => Ok((r.chi2, r.p_value)),
                // a degenerate marginal carries no evidence against independence
                Err(_) => Ok((0.0, 1.0)),
            }
        })
        .collect::<Result<_>>()?;
    let chi2: Vec<f64> = tables.iter().map(|t| t.0).collect();
    let p_values: Vec<f64> = tables.iter().map(|t| t.1).collect();

    let corr = |a: &[f64], b: &[f64]| pearson_corr(a, b).unwrap_or(f64::NAN);
    Ok(ApproxReport {
        pooled_fraction: frac.pooled,
        min_entry_fraction: frac.per_entry.iter().copied().fold(f64::INFINITY, f64::min),
        max_entry_fraction: frac.per_entry.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bernoulli_samples: frac.samples * frac.per_entry.len(),
        ks_p_uniform: ks_uniform(&p_values)?,
        ks_critical_1pct: ks_critical_1pct(p_values.len()),
        chi2,
        p_values,
        corr_tw_td: corr(&t_w, &t_d),
        corr_tw_td_prev: corr(&t_w, &t_d_prev),
        t_w,
        t_d,
        t_d_prev,
    })
}

pub fn write_approx_csv<W: Write>(mut w: W, plan: &ApproxPlan, r: &ApproxReport) -> Result<()> {
    writeln!(w, "{APPROX_HEADER}")?;
    let id = &plan.experiment_id;
    let mut line = |part: &str, index: &str, n: usize, stat: &str, v: f64| {
        writeln!(w, "{id},{part},{index},{n},{},{},{stat},{}", plan.depth, plan.layer, fmt_real(v))
    };
    line("bernoulli", "all", plan.n, "pooled_fraction", r.pooled_fraction)?;
    line("bernoulli", "all", plan.n, "min_entry_fraction", r.min_entry_fraction)?;
    line("bernoulli", "all", plan.n, "max_entry_fraction", r.max_entry_fraction)?;
    for (i, (c, p)) in r.chi2.iter().zip(&r.p_values).enumerate() {
        line("chi2", &i.to_string(), plan.stats_n, "chi2", *c)?;
        line("chi2", &i.to_string(), plan.stats_n, "p_value", *p)?;
    }
    line("chi2", "all", plan.stats_n, "ks_p_uniform", r.ks_p_uniform)?;
    for (i, ((a, b), c)) in r.t_w.iter().zip(&r.t_d).zip(&r.t_d_prev).enumerate() {
        line("pairs", &i.to_string(), plan.stats_n, "t_w", *a)?;
        line("pairs", &i.to_string(), plan.stats_n, "t_d", *b)?;
        line("pairs", &i.to_string(), plan.stats_n, "t_d_prev", *c)?;
    }
    line("pairs", "all", plan.stats_n, "corr_tw_td", r.corr_tw_td)?;
    line("pairs", "all", plan.stats_n, "corr_tw_td_prev", r.corr_tw_td_prev)?;
    w.flush()?;
    Ok(())
}
