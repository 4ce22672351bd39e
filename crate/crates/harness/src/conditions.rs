//! Monte Carlo evaluation of the stability-theorem conditions for configured
//! masks.

use std::io::Write;

use jacspec::pruning::{check_stability_conditions, ConditionReport, Mask};
use jacspec::randomness::{make_rng, sample_gaussian_matrix, stream_id};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};
use crate::error::{HarnessError, Result};
use crate::rows::fmt_real;
use crate::sweep::{Treatment, MASK_STREAM_BASE};

pub const CONDITION_HEADER: &str = "experiment_id,method,sparsity,scaling_mode,statistic,value,stderr";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionRow {
    pub method: String,
    pub sparsity: f64,
    pub scaling_mode: String,
    #[serde(skip)]
    pub report: ConditionReport,
}

/// One report per `[[pruning]]` entry, or a single keep-all report when the
/// config has none.
pub fn run_condition_check(cfg: &ExperimentConfig, master_seed: u64) -> Result<Vec<ConditionRow>> {
    cfg.validate()?;
    if cfg.kind != Kind::ConditionCheck {
        return Err(HarnessError::Config(format!("{} is not condition_check", cfg.kind.as_str())));
    }
    let n = cfg.n;
    let sigma_w2 = match cfg.sigma_w2_values().as_slice() {
        [s] => *s,
        _ => return Err(HarnessError::Config("condition_check takes a single sigma_w2".into())),
    };
    let id = cfg.experiment_id.as_str();
    let draw = |i: usize| sample_gaussian_matrix::<f64>(&mut make_rng(master_seed, stream_id(id, i as u64, 0)), n, n, sigma_w2 / n as f64);
    let specs = cfg.pruning_specs()?;
    let mut out = Vec::new();
    if specs.is_empty() {
        let report = check_stability_conditions(draw, |_, _| Ok(Mask::keep_all(n)), n, cfg.mc_samples())?;
        out.push(ConditionRow { method: "dense".into(), sparsity: 0.0, scaling_mode: "none".into(), report });
    }
    for spec in specs {
        let tr = Treatment::pruned(sigma_w2, spec, n);
        let report = check_stability_conditions(
            draw,
            |i, w| Ok(spec.apply(&mut make_rng(master_seed, stream_id(id, i as u64, MASK_STREAM_BASE)), w)?.mask),
            n,
            cfg.mc_samples(),
        )?;
        out.push(ConditionRow { method: tr.method, sparsity: tr.sparsity, scaling_mode: tr.scaling_mode, report });
    }
    Ok(out)
}

pub fn write_condition_csv<W: Write>(mut w: W, experiment_id: &str, rows: &[ConditionRow]) -> Result<()> {
    writeln!(w, "{CONDITION_HEADER}")?;
    for r in rows {
        let p = &r.report;
        let stats = [
            ("growth", p.growth.value, p.growth.stderr),
            ("second_moment_max", p.second_moment.max_abs, p.second_moment.max_abs_stderr),
            ("second_moment_pooled", p.second_moment.pooled.value, p.second_moment.pooled.stderr),
            ("mean_max", p.mean.max_abs, p.mean.max_abs_stderr),
            ("mean_pooled", p.mean.pooled.value, p.mean.pooled.stderr),
        ];
        for (name, v, se) in stats {
            writeln!(
                w,
                "{experiment_id},{},{},{},{name},{},{}",
                r.method,
                fmt_real(r.sparsity),
                r.scaling_mode,
                fmt_real(v),
                fmt_real(se)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
