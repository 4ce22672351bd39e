//! Growth-rate fits of sweep CSVs, one per treatment group.

use jacspec::diagnostics::{classify_stability, fit_growth_rate, GrowthFit, StabilityVerdict};

use crate::error::{HarnessError, Result};
use crate::rows::SweepRow;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupFit {
    pub key: String,
    /// `(L, mean log-norm over seeds)`; depths with a non-finite value are dropped.
    pub profile: Vec<(usize, f64)>,
    pub fit: GrowthFit,
    pub verdict: StabilityVerdict,
}

/// Mean log-norm per depth for each group, groups in order of first appearance.
pub fn group_profiles(rows: &[SweepRow]) -> Vec<(String, Vec<(usize, f64)>)> {
    let mut groups: Vec<(String, Vec<(usize, f64, usize)>)> = Vec::new();
    for r in rows {
        let key = r.group_key();
        let idx = match groups.iter().position(|g| g.0 == key) {
            Some(i) => i,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx].1;
        match g.iter_mut().find(|p| p.0 == r.depth) {
            Some(p) => {
                p.1 += r.log_jac_norm;
                p.2 += 1;
            }
            None => g.push((r.depth, r.log_jac_norm, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(k, mut pts)| {
            pts.sort_by_key(|p| p.0);
            (k, pts.into_iter().map(|(l, s, c)| (l, s / c as f64)).filter(|p| p.1.is_finite()).collect())
        })
        .collect()
}

pub fn fit_groups(rows: &[SweepRow], window: (usize, Option<usize>), epsilon: f64) -> Result<Vec<GroupFit>> {
    if !(epsilon > 0.0) {
        return Err(HarnessError::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    group_profiles(rows)
        .into_iter()
        .map(|(key, profile)| {
            let hi = window.1.unwrap_or_else(|| profile.last().map_or(0, |p| p.0));
            let fit = fit_growth_rate(&profile, (window.0, hi)).map_err(|e| HarnessError::Runtime(format!("{key}: {e}")))?;
            let verdict = classify_stability(&fit, epsilon);
            Ok(GroupFit { key, profile, fit, verdict })
        })
        .collect()
}

/// Mean log-norm of `rows` at depth `depth`.
pub fn mean_at(rows: &[&SweepRow], depth: usize) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.depth == depth).map(|r| r.log_jac_norm).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
