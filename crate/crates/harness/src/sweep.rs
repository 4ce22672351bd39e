//! Depth, pruning and correlation sweeps.
//!
//! One task is one `(treatment, seed)` pair. A task samples a single network
//! of the largest configured depth and reads every shorter depth off its
//! prefix, so all depths of a task share weights. Random streams depend only
//! on `(experiment_id, seed index, layer)`, never on the treatment, so
//! treatments are compared on common random numbers.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use jacspec::linalg::DenseMatrix;
use jacspec::network::{jacobian_log_norm_profile, read_input_vector, synthetic_input};
use jacspec::pruning::{Mask, PruningMethod, PruningSpec};
use jacspec::randomness::{make_rng, sample_correlated_layer, sample_gaussian_matrix, stream_id, RngStream};
use jacspec::{Error, MlpConfig, Weights};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Kind};
use crate::error::{HarnessError, Result};
use crate::rows::SweepRow;

/// Layer index reserved for the input vector stream.
pub const INPUT_STREAM: u64 = u64::MAX;
/// Offset added to the layer index for mask streams.
pub const MASK_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerModel {
    Iid { sigma_w2: f64 },
    Correlated { eta: f64, normalize: bool },
    Pruned { sigma_w2: f64, spec: PruningSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Treatment {
    pub model: LayerModel,
    pub method: String,
    pub sparsity: f64,
    pub scaling_mode: String,
    pub sigma_w2: f64,
    pub eta: f64,
}

impl Treatment {
    pub fn iid(sigma_w2: f64) -> Self {
        Self {
            model: LayerModel::Iid { sigma_w2 },
            method: "dense".into(),
            sparsity: 0.0,
            scaling_mode: "none".into(),
            sigma_w2,
            eta: 0.0,
        }
    }

    pub fn correlated(eta: f64, normalize: bool) -> Self {
        Self {
            model: LayerModel::Correlated { eta, normalize },
            method: if normalize { "correlated_normalized" } else { "correlated" }.into(),
            sparsity: 0.0,
            scaling_mode: "none".into(),
            sigma_w2: 2.0,
            eta,
        }
    }

    pub fn pruned(sigma_w2: f64, spec: PruningSpec, n: usize) -> Self {
        let sparsity = match spec.method {
            PruningMethod::Random { sparsity } => sparsity,
            // expected sparsity P(|w| <= t) for w ~ N(0, σ²/n)
            PruningMethod::MagnitudeThreshold { t } => jacspec::special::erf(t * (n as f64 / (2.0 * sigma_w2)).sqrt()),
            PruningMethod::MagnitudeTopR(r) => 1.0 - r.resolve(n) as f64 / (n * n) as f64,
        };
        Self {
            model: LayerModel::Pruned { sigma_w2, spec },
            method: spec.method_name().into(),
            sparsity,
            scaling_mode: spec.scaling.as_str().into(),
            sigma_w2,
            eta: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum InputSource {
    Synthetic,
    Fixed(Vec<f64>),
}

/// A fully resolved sweep.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub experiment_id: String,
    pub kind: Kind,
    pub n: usize,
    pub input_dim: usize,
    pub depths: Vec<usize>,
    pub seeds: usize,
    pub treatments: Vec<Treatment>,
    pub input: InputSource,
    pub tol: f64,
    pub max_iter: usize,
}

impl SweepPlan {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut treatments = Vec::new();
        match cfg.kind {
            Kind::DepthSweep => {
                let mut sig = cfg.sigma_w2_values();
                sig.sort_by(f64::total_cmp);
                sig.dedup();
                treatments.extend(sig.into_iter().map(Treatment::iid));
            }
            Kind::PruneSweep => {
                let specs = cfg.pruning_specs()?;
                for s in cfg.sigma_w2_values() {
                    treatments.extend(specs.iter().map(|&spec| Treatment::pruned(s, spec, cfg.n)));
                }
            }
            Kind::CorrSweep => {
                treatments.extend(
                    cfg.eta.as_deref().unwrap_or_default().iter().map(|&e| Treatment::correlated(e, cfg.normalize_variance)),
                );
            }
            other => return Err(HarnessError::Config(format!("{} is not a sweep kind", other.as_str()))),
        }
        let input = if cfg.input == "synthetic" {
            InputSource::Synthetic
        } else {
            let f = File::open(&cfg.input).map_err(|e| HarnessError::Config(format!("input {}: {e}", cfg.input)))?;
            InputSource::Fixed(read_input_vector(BufReader::new(f), cfg.input_dim()).map_err(|e| HarnessError::Config(e.to_string()))?)
        };
        Ok(Self {
            experiment_id: cfg.experiment_id.clone(),
            kind: cfg.kind,
            n: cfg.n,
            input_dim: cfg.input_dim(),
            depths: cfg.depths.clone(),
            seeds: cfg.seeds,
            treatments,
            input,
            tol: cfg.tol(),
            max_iter: cfg.max_iter(),
        })
    }

    pub fn max_depth(&self) -> usize {
        *self.depths.last().expect("validated depths")
    }

    pub fn task_count(&self) -> usize {
        self.treatments.len() * self.seeds
    }

    fn rng(&self, master_seed: u64, seed: usize, layer: u64) -> RngStream {
        make_rng(master_seed, stream_id(&self.experiment_id, seed as u64, layer))
    }
}

/// Per-treatment scale statistics over all layers and seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub method: String,
    pub scaling_mode: String,
    pub sparsity: f64,
    pub mean_analytic: f64,
    pub mean_calibrated: f64,
    pub mean_ratio: f64,
    pub mean_kept_fraction: f64,
    pub warnings: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct TaskScales {
    analytic: f64,
    calibrated: f64,
    ratio: f64,
    kept: f64,
    warnings: usize,
    layers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct TaskOutput {
    task: usize,
    rows: Vec<String>,
    scales: Option<TaskScales>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub scales: Vec<ScaleSummary>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub master_seed: u64,
    pub threads: usize,
    /// Record real wall-clock times; off by default so reruns are byte-identical.
    pub timing: bool,
}

/// Samples the network of one task and evaluates all configured depths.
fn run_task(plan: &SweepPlan, task: usize, opts: &RunOptions) -> Result<TaskOutput> {
    let start = Instant::now();
    let t_idx = task / plan.seeds;
    let seed = task % plan.seeds;
    let tr = &plan.treatments[t_idx];
    let n = plan.n;
    let depth = plan.max_depth();
    let ms = opts.master_seed;
    let config = MlpConfig::new(plan.input_dim, n, depth)?;

    let w_in = sample_gaussian_matrix(&mut plan.rng(ms, seed, 0), n, plan.input_dim, 2.0 / plan.input_dim as f64)?;
    let mut hidden: Vec<DenseMatrix<f64>> = Vec::with_capacity(depth);
    let mut masks: Vec<Mask<f64>> = Vec::new();
    let mut scales = TaskScales::default();
    for l in 1..=depth {
        let mut rng = plan.rng(ms, seed, l as u64);
        let w = match tr.model {
            LayerModel::Iid { sigma_w2 } | LayerModel::Pruned { sigma_w2, .. } => {
                sample_gaussian_matrix(&mut rng, n, n, sigma_w2 / n as f64)?
            }
            LayerModel::Correlated { eta, normalize } => sample_correlated_layer(&mut rng, n, 2.0 / n as f64, eta, normalize)?,
        };
        if let LayerModel::Pruned { spec, .. } = tr.model {
            let p = spec.apply(&mut plan.rng(ms, seed, MASK_STREAM_BASE + l as u64), &w)?;
            scales.analytic += p.report.analytic;
            scales.calibrated += p.report.calibrated;
            scales.ratio += p.report.ratio;
            scales.kept += p.mask.kept_fraction();
            scales.warnings += p.report.warnings.len();
            scales.layers += 1;
            masks.push(p.mask);
        }
        hidden.push(w);
    }
    let pruned = !masks.is_empty();
    let mask_scales: Vec<f64> = masks.iter().map(|m| m.scale()).collect();
    let mut weights = Weights::new(w_in, hidden);
    if pruned {
        weights = weights.with_masks(masks);
    }
    let x = match &plan.input {
        InputSource::Synthetic => synthetic_input(&mut plan.rng(ms, seed, INPUT_STREAM), plan.input_dim),
        InputSource::Fixed(v) => v.clone(),
    };

    let profile = match jacobian_log_norm_profile(&config, &weights, &x, &plan.depths, plan.tol, plan.max_iter) {
        Ok(p) => p.into_iter().map(|p| (p.depth, p.log_norm, p.estimate.converged)).collect::<Vec<_>>(),
        Err(Error::Overflow { layer }) => overflow_profile(plan, &weights, &x, layer)?,
        Err(e) => return Err(e.into()),
    };
    let elapsed = if opts.timing { start.elapsed().as_millis() as u64 } else { 0 };
    let rows = profile
        .into_iter()
        .map(|(l, log_norm, converged)| {
            let scale_value =
                if pruned { mask_scales[..l].iter().sum::<f64>() / l as f64 } else { 1.0 };
            SweepRow {
                experiment_id: plan.experiment_id.clone(),
                kind: plan.kind.as_str().into(),
                seed: seed as u64,
                n,
                depth: l,
                sigma_w2: tr.sigma_w2,
                method: tr.method.clone(),
                sparsity: tr.sparsity,
                scaling_mode: tr.scaling_mode.clone(),
                scale_value,
                eta: tr.eta,
                k: 1,
                log_jac_norm: log_norm,
                converged,
                wall_time_ms: elapsed,
            }
            .to_csv()
        })
        .collect();
    Ok(TaskOutput { task, rows, scales: pruned.then_some(scales) })
}

/// Depths below the overflowing layer are still well defined; the rest are
/// flagged with a NaN log-norm.
fn overflow_profile(plan: &SweepPlan, weights: &Weights, x: &[f64], layer: usize) -> Result<Vec<(usize, f64, bool)>> {
    let ok: Vec<usize> = plan.depths.iter().copied().filter(|&d| d < layer).collect();
    let mut out = Vec::new();
    if !ok.is_empty() && layer > 0 {
        let cut = layer - 1;
        let config = MlpConfig::new(plan.input_dim, plan.n, cut)?;
        let mut w = Weights::new(weights.w_in.clone(), weights.hidden[..cut].to_vec());
        if let Some(m) = &weights.masks {
            w = w.with_masks(m[..cut].to_vec());
        }
        for p in jacobian_log_norm_profile(&config, &w, x, &ok, plan.tol, plan.max_iter)? {
            out.push((p.depth, p.log_norm, p.estimate.converged));
        }
    }
    out.extend(plan.depths.iter().filter(|&&d| d >= layer).map(|&d| (d, f64::NAN, false)));
    Ok(out)
}

fn load_checkpoint(path: &Path, plan: &SweepPlan) -> Result<HashMap<usize, TaskOutput>> {
    let mut done = HashMap::new();
    let Ok(f) = File::open(path) else { return Ok(done) };
    for line in BufReader::new(f).lines() {
        let line = line?;
        // a torn final line from an interrupted run is simply recomputed
        if let Ok(t) = serde_json::from_str::<TaskOutput>(&line) {
            if t.task < plan.task_count() && t.rows.len() == plan.depths.len() {
                done.insert(t.task, t);
            }
        }
    }
    Ok(done)
}

/// Runs every task of `plan` and returns rows ordered by
/// `(treatment, L, seed)`. With `checkpoint`, finished tasks are appended to
/// that file as they complete and tasks already present are not recomputed.
pub fn run_sweep(plan: &SweepPlan, opts: &RunOptions, checkpoint: Option<&Path>) -> Result<SweepOutput> {
    let mut done = match checkpoint {
        Some(p) => load_checkpoint(p, plan)?,
        None => HashMap::new(),
    };
    let pending: Vec<usize> = (0..plan.task_count()).filter(|t| !done.contains_key(t)).collect();
    let sink = match checkpoint {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let work = || -> Result<Vec<TaskOutput>> {
        pending
            .par_iter()
            .map(|&task| {
                let out = run_task(plan, task, opts)?;
                if let Some(sink) = &sink {
                    let line = serde_json::to_string(&out).map_err(|e| HarnessError::Runtime(e.to_string()))?;
                    let mut f = sink.lock().expect("checkpoint lock");
                    writeln!(f, "{line}")?;
                    f.flush()?;
                }
                Ok(out)
            })
            .collect()
    };
    let fresh = with_threads(opts.threads, work)??;
    for t in fresh {
        done.insert(t.task, t);
    }

    let mut rows = Vec::with_capacity(plan.task_count() * plan.depths.len());
    let mut scales = Vec::new();
    for (t_idx, tr) in plan.treatments.iter().enumerate() {
        let tasks: Vec<&TaskOutput> = (0..plan.seeds).map(|s| &done[&(t_idx * plan.seeds + s)]).collect();
        for d in 0..plan.depths.len() {
            for t in &tasks {
                rows.push(SweepRow::parse(&t.rows[d])?);
            }
        }
        if matches!(tr.model, LayerModel::Pruned { .. }) {
            let mut acc = TaskScales::default();
            for t in &tasks {
                let s = t.scales.as_ref().expect("pruned task has scales");
                acc.analytic += s.analytic;
                acc.calibrated += s.calibrated;
                acc.ratio += s.ratio;
                acc.kept += s.kept;
                acc.warnings += s.warnings;
                acc.layers += s.layers;
            }
            let m = acc.layers as f64;
            scales.push(ScaleSummary {
                method: tr.method.clone(),
                scaling_mode: tr.scaling_mode.clone(),
                sparsity: tr.sparsity,
                mean_analytic: acc.analytic / m,
                mean_calibrated: acc.calibrated / m,
                mean_ratio: acc.ratio / m,
                mean_kept_fraction: acc.kept / m,
                warnings: acc.warnings,
            });
        }
    }
    Ok(SweepOutput { rows, scales })
}

/// Runs `f` on a dedicated pool of `threads` workers (0 means rayon's default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
