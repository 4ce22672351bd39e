//! Sweep rows and their CSV encoding.

use std::io::{BufRead, Write};

use crate::error::{HarnessError, Result};

pub const HEADER: &str =
    "experiment_id,kind,seed,n,L,sigma_w2,method,sparsity,scaling_mode,scale_value,eta,k,log_jac_norm,converged,wall_time_ms";

pub const NEG_INF: &str = "neg_inf";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub experiment_id: String,
    pub kind: String,
    pub seed: u64,
    pub n: usize,
    pub depth: usize,
    pub sigma_w2: f64,
    pub method: String,
    pub sparsity: f64,
    pub scaling_mode: String,
    pub scale_value: f64,
    pub eta: f64,
    pub k: usize,
    pub log_jac_norm: f64,
    pub converged: bool,
    pub wall_time_ms: u64,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        NEG_INF.into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        let mut buf = ryu::Buffer::new();
        let s = buf.format_finite(v);
        s.strip_suffix(".0").unwrap_or(s).to_string()
    }
}

pub fn parse_real(s: &str) -> Result<f64> {
    match s {
        NEG_INF => Ok(f64::NEG_INFINITY),
        "inf" => Ok(f64::INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s.parse().map_err(|_| HarnessError::Runtime(format!("bad number {s:?} in CSV"))),
    }
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment_id,
            self.kind,
            self.seed,
            self.n,
            self.depth,
            fmt_real(self.sigma_w2),
            self.method,
            fmt_real(self.sparsity),
            self.scaling_mode,
            fmt_real(self.scale_value),
            fmt_real(self.eta),
            self.k,
            fmt_real(self.log_jac_norm),
            self.converged,
            self.wall_time_ms
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(HarnessError::Runtime(format!("expected 15 columns, got {}: {line:?}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| HarnessError::Runtime(format!("bad integer {s:?} in CSV")));
        Ok(Self {
            experiment_id: f[0].into(),
            kind: f[1].into(),
            seed: int(f[2])?,
            n: int(f[3])? as usize,
            depth: int(f[4])? as usize,
            sigma_w2: parse_real(f[5])?,
            method: f[6].into(),
            sparsity: parse_real(f[7])?,
            scaling_mode: f[8].into(),
            scale_value: parse_real(f[9])?,
            eta: parse_real(f[10])?,
            k: int(f[11])? as usize,
            log_jac_norm: parse_real(f[12])?,
            converged: match f[13] {
                "true" => true,
                "false" => false,
                other => return Err(HarnessError::Runtime(format!("bad flag {other:?} in CSV"))),
            },
            wall_time_ms: int(f[14])?,
        })
    }

    /// Columns identifying the treatment, excluding seed and depth.
    pub fn group_key(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.experiment_id,
            self.kind,
            self.n,
            fmt_real(self.sigma_w2),
            self.method,
            fmt_real(self.sparsity),
            self.scaling_mode,
            fmt_real(self.eta)
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<SweepRow>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != HEADER {
        return Err(HarnessError::Runtime(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(SweepRow::parse(line.trim_end())?);
        }
    }
    Ok(out)
}
