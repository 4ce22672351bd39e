//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use jacspec::pruning::{PruningMethod, PruningSpec, Scaling, TopR};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    DepthSweep,
    PruneSweep,
    CorrSweep,
    ApproxVerify,
    ConditionCheck,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::DepthSweep => "depth_sweep",
            Kind::PruneSweep => "prune_sweep",
            Kind::CorrSweep => "corr_sweep",
            Kind::ApproxVerify => "approx_verify",
            Kind::ConditionCheck => "condition_check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// One `[[pruning]]` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningEntry {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Exponent for `r = ⌈n (ln n)^c⌉` when `r` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Keep fraction for top-r, `r = round(retention · n²)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<f64>,
    #[serde(default = "default_scaling")]
    pub scaling: String,
}

fn default_scaling() -> String {
    "none".into()
}

impl PruningEntry {
    pub fn to_spec(&self, n: usize) -> Result<PruningSpec> {
        let scaling = Scaling::parse(&self.scaling).map_err(|e| HarnessError::Config(e.to_string()))?;
        let only = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(HarnessError::Config(format!("pruning method {name}: conflicting or missing parameters")))
            }
        };
        let method = match self.method.as_str() {
            "random" => {
                only("random", self.s.is_some() && self.t.is_none() && self.r.is_none() && self.c.is_none() && self.retention.is_none())?;
                PruningMethod::Random { sparsity: self.s.unwrap() }
            }
            "magnitude_threshold" => {
                only("magnitude_threshold", self.t.is_some() && self.s.is_none() && self.r.is_none() && self.c.is_none() && self.retention.is_none())?;
                PruningMethod::MagnitudeThreshold { t: self.t.unwrap() }
            }
            "magnitude_top_r" => {
                let given = [self.r.is_some(), self.c.is_some(), self.retention.is_some()].iter().filter(|&&b| b).count();
                only("magnitude_top_r", given == 1 && self.s.is_none() && self.t.is_none())?;
                let r = if let Some(r) = self.r {
                    TopR::Count(r)
                } else if let Some(c) = self.c {
                    TopR::LogPower(c)
                } else {
                    let q = self.retention.unwrap();
                    if !(q > 0.0 && q <= 1.0) {
                        return Err(HarnessError::Config(format!("retention must lie in (0, 1], got {q}")));
                    }
                    TopR::Count(((q * (n * n) as f64).round() as usize).max(1))
                };
                PruningMethod::MagnitudeTopR(r)
            }
            other => return Err(HarnessError::Config(format!("unknown pruning method {other:?}"))),
        };
        let spec = PruningSpec { method, scaling };
        spec.validate(n).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// The configuration file as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub kind: Kind,
    pub n: usize,
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_w2: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub normalize_variance: bool,
    #[serde(default = "synthetic")]
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pruning: Vec<PruningEntry>,
    /// Layer index `l` for the activation statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi2_tables: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi2_samples: Option<usize>,
    /// Width used for the χ² tables and the weight/activation pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn synthetic() -> String {
    "synthetic".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.experiment_id.is_empty() || self.experiment_id.contains([',', '\n', '\r', '"']) {
            return bad(format!("experiment_id must be non-empty without commas or quotes: {:?}", self.experiment_id));
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if self.kind != Kind::ConditionCheck {
            if self.depths.is_empty() {
                return bad("depths must be non-empty".into());
            }
            if self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
                return bad("depths must be >= 1 and strictly ascending".into());
            }
        }
        for s in self.sigma_w2_values() {
            if !(s > 0.0) || !s.is_finite() {
                return bad(format!("sigma_w2 must be > 0, got {s}"));
            }
        }
        if let Some(etas) = &self.eta {
            if etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
                return bad("eta values must be finite and >= 0".into());
            }
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return bad("tol must be > 0".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        for p in &self.pruning {
            p.to_spec(self.n)?;
        }
        match self.kind {
            Kind::PruneSweep if self.pruning.is_empty() => return bad("prune_sweep needs [[pruning]] entries".into()),
            Kind::CorrSweep if self.eta.as_ref().map_or(true, Vec::is_empty) => {
                return bad("corr_sweep needs a non-empty eta list".into())
            }
            Kind::ApproxVerify => {
                let l = self.layer();
                if l == 0 || l > *self.depths.last().unwrap() {
                    return bad(format!("layer {l} must lie in 1..=max depth"));
                }
                if self.chi2_samples() < 2 || self.chi2_tables() < 1 || self.stats_seeds() < 2 {
                    return bad("chi2_tables >= 1, chi2_samples >= 2 and stats_seeds >= 2 required".into());
                }
            }
            Kind::ConditionCheck if self.mc_samples() < 100 => return bad("mc_samples must be >= 100".into()),
            _ => {}
        }
        Ok(())
    }

    /// σ_w² values; defaults to the critical value 2.
    pub fn sigma_w2_values(&self) -> Vec<f64> {
        self.sigma_w2.as_ref().map_or_else(|| vec![2.0], OneOrMany::to_vec)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim.unwrap_or(self.n)
    }

    pub fn max_depth(&self) -> usize {
        self.depths.last().copied().unwrap_or(0)
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(jacspec::linalg::DEFAULT_TOL)
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or(jacspec::linalg::DEFAULT_MAX_ITER)
    }

    pub fn layer(&self) -> usize {
        self.layer.unwrap_or(10)
    }

    pub fn chi2_tables(&self) -> usize {
        self.chi2_tables.unwrap_or(200)
    }

    pub fn chi2_samples(&self) -> usize {
        self.chi2_samples.unwrap_or(100)
    }

    pub fn stats_n(&self) -> usize {
        self.stats_n.unwrap_or(100)
    }

    pub fn stats_seeds(&self) -> usize {
        self.stats_seeds.unwrap_or(1000)
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples.unwrap_or(200)
    }

    pub fn pruning_specs(&self) -> Result<Vec<PruningSpec>> {
        self.pruning.iter().map(|p| p.to_spec(self.n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalar_and_list_sigma() {
        let a = ExperimentConfig::from_toml("experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[1,2]\nsigma_w2=2.0").unwrap();
        assert_eq!(a.sigma_w2_values(), vec![2.0]);
        let b = ExperimentConfig::from_toml("experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[1,2]\nsigma_w2=[0.5,4]").unwrap();
        assert_eq!(b.sigma_w2_values(), vec![0.5, 4.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[2,1]",
            "experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[]",
            "experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[1]\nseeds=0",
            "experiment_id='a,b'\nkind='depth_sweep'\nn=8\ndepths=[1]",
            "experiment_id='a'\nkind='nope'\nn=8\ndepths=[1]",
            "experiment_id='a'\nkind='depth_sweep'\nn=8\ndepths=[1]\nbogus=1",
            "experiment_id='a'\nkind='prune_sweep'\nn=8\ndepths=[1]",
            "experiment_id='a'\nkind='prune_sweep'\nn=8\ndepths=[1]\n[[pruning]]\nmethod='random'\ns=1.0",
            "experiment_id='a'\nkind='prune_sweep'\nn=8\ndepths=[1]\n[[pruning]]\nmethod='random'\ns=0.5\nt=0.1",
            "experiment_id='a'\nkind='corr_sweep'\nn=8\ndepths=[1]",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn pruning_entries() {
        let cfg = ExperimentConfig::from_toml(
            "experiment_id='p'\nkind='prune_sweep'\nn=10\ndepths=[1]\n\
             [[pruning]]\nmethod='random'\ns=0.5\nscaling='analytic'\n\
             [[pruning]]\nmethod='magnitude_top_r'\nretention=0.12\nscaling='calibrated'\n\
             [[pruning]]\nmethod='magnitude_threshold'\nt=0.2",
        )
        .unwrap();
        let specs = cfg.pruning_specs().unwrap();
        assert_eq!(specs[1].method, PruningMethod::MagnitudeTopR(TopR::Count(12)));
        assert_eq!(specs[2].scaling, Scaling::Unscaled);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }
}
