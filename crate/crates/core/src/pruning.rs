//! Pruning masks, their rescaling factors and the numeric checks of the
//! stability conditions.
//!
//! Every mask is binary-with-scale: each entry is either `0` or the common
//! scale factor, which is also the uniform bound `β_n`. Masks are built per
//! matrix; input and output layers are never pruned.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::randomness::RngStream;
use crate::scalar::Scalar;
use crate::special::erfc_inv;

pub use crate::special::{erf, erf_inv, erfc};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruningMethod {
    /// Keep each entry independently with probability `1 − sparsity`.
    Random { sparsity: f64 },
    /// Keep entries with `|w| > t`.
    MagnitudeThreshold { t: f64 },
    /// Keep the `r` largest `|w|`.
    MagnitudeTopR(TopR),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TopR {
    Count(usize),
    /// `r = ⌈n (ln n)^c⌉`.
    LogPower(f64),
}

impl TopR {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            TopR::Count(r) => r,
            TopR::LogPower(c) => {
                let nf = n as f64;
                (nf * nf.ln().powf(c)).ceil() as usize
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scaling {
    /// Scale 1.
    Unscaled,
    /// Closed-form factor of the method: `(1−s)^{−1/2}` for random pruning,
    /// `((√(2π) e^{nt²/2}) / (t n^{3/2}))^{1/2}` for magnitude pruning.
    Analytic,
    /// `√(2n / Σ_kept w²)`, enforcing the second-moment condition exactly.
    Calibrated,
    /// `(1−s)^{−1/2}` with `s` the realized sparsity, whatever the method.
    RetentionFactor,
}

impl Scaling {
    pub fn as_str(self) -> &'static str {
        match self {
            Scaling::Unscaled => "none",
            Scaling::Analytic => "analytic",
            Scaling::Calibrated => "calibrated",
            Scaling::RetentionFactor => "retention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scaling::Unscaled),
            "analytic" => Ok(Scaling::Analytic),
            "calibrated" => Ok(Scaling::Calibrated),
            "retention" => Ok(Scaling::RetentionFactor),
            other => Err(Error::InvalidArgument(format!("unknown scaling {other:?}"))),
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruningSpec {
    pub method: PruningMethod,
    pub scaling: Scaling,
}

impl PruningSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.method {
            PruningMethod::Random { sparsity } => check_sparsity(sparsity),
            PruningMethod::MagnitudeThreshold { t } => check_threshold(t),
            PruningMethod::MagnitudeTopR(r) => check_rank(r.resolve(n), n),
        }
    }

    /// Builds the mask for one weight matrix. `rng` is only consumed by
    /// random pruning.
    pub fn apply<T: Scalar>(&self, rng: &mut RngStream, w: &DenseMatrix<T>) -> Result<PrunedMask<T>> {
        let n = w.rows();
        match self.method {
            PruningMethod::Random { sparsity } => random_mask(rng, w, sparsity, self.scaling),
            PruningMethod::MagnitudeThreshold { t } => magnitude_mask_threshold(w, n, t, self.scaling),
            PruningMethod::MagnitudeTopR(r) => magnitude_mask_top_r(w, n, r.resolve(n), self.scaling),
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            PruningMethod::Random { .. } => "random",
            PruningMethod::MagnitudeThreshold { .. } => "magnitude_threshold",
            PruningMethod::MagnitudeTopR(_) => "magnitude_top_r",
        }
    }
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("sparsity must lie in [0, 1), got {s}")));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be > 0, got {t}")));
    }
    Ok(())
}

fn check_rank(r: usize, n: usize) -> Result<()> {
    if r == 0 || r > n * n {
        return Err(Error::InvalidArgument(format!("r must lie in 1..={}, got {r}", n * n)));
    }
    Ok(())
}

/// A binary-with-scale mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T> {
    matrix: DenseMatrix<T>,
    scale: T,
    kept_count: usize,
    meta: MaskMeta,
}

/// Provenance of a mask, written to the export sidecar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskMeta {
    pub method: String,
    pub sparsity: Option<f64>,
    pub threshold: Option<f64>,
    pub rank: Option<usize>,
}

impl<T: Scalar> Mask<T> {
    /// Mask with entries `scale` where `keep` is set and `0` elsewhere.
    pub fn from_pattern(rows: usize, cols: usize, keep: &[bool], scale: T, meta: MaskMeta) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::BadLength { rows, cols, len: keep.len() });
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("mask scale must be positive and finite, got {scale}")));
        }
        let data: Vec<T> = keep.iter().map(|&k| if k { scale } else { T::zero() }).collect();
        let kept_count = keep.iter().filter(|&&k| k).count();
        Ok(Self { matrix: DenseMatrix::new(rows, cols, data)?, scale, kept_count, meta })
    }

    pub fn keep_all(n: usize) -> Self {
        Self::from_pattern(n, n, &vec![true; n * n], T::one(), MaskMeta { method: "dense".into(), ..Default::default() })
            .expect("valid keep-all mask")
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.matrix
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Uniform bound on the entries; equals the scale for binary masks.
    pub fn beta_n(&self) -> T {
        self.scale
    }

    pub fn kept_count(&self) -> usize {
        self.kept_count
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept_count as f64 / (self.matrix.rows() * self.matrix.cols()) as f64
    }

    pub fn meta(&self) -> &MaskMeta {
        &self.meta
    }

    pub fn keep_pattern(&self) -> Vec<bool> {
        self.matrix.as_slice().iter().map(|&v| v != T::zero()).collect()
    }

    /// `mask method=<m> s=<s> t=<t> r=<r> scale=<scale> kept=<count>`, with
    /// `na` for parameters that do not apply.
    pub fn sidecar_line(&self) -> String {
        fn opt<V: fmt::Display>(v: Option<V>) -> String {
            v.map_or_else(|| "na".to_string(), |v| v.to_string())
        }
        format!(
            "mask method={} s={} t={} r={} scale={} kept={}",
            self.meta.method,
            opt(self.meta.sparsity),
            opt(self.meta.threshold),
            opt(self.meta.rank),
            self.scale.as_f64(),
            self.kept_count
        )
    }
}

/// Closed-form and calibrated factors for one mask, plus the realized
/// second-moment statistics under the applied scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleReport {
    pub analytic: f64,
    pub calibrated: f64,
    /// `analytic / calibrated`.
    pub ratio: f64,
    /// `|½·n·mean_ij (b w)² − 1|`: the row second-moment condition with the
    /// row expectation estimated from all entries (entries are exchangeable
    /// for every shipped method). Zero up to rounding for calibrated masks.
    pub second_moment_stat: f64,
    /// `max_i |½ Σ_k (b_ik w_ik)² − 1|` on this single realization.
    pub max_row_realized: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrunedMask<T> {
    pub mask: Mask<T>,
    pub report: ScaleReport,
    /// Magnitude threshold: given `t`, or the solved `t` for top-r.
    pub threshold: Option<f64>,
}

/// `√(2n / Σ_{kept} w²)`.
pub fn calibrated_scale<T: Scalar>(w: &DenseMatrix<T>, keep: &[bool], n: usize) -> Result<f64> {
    if keep.len() != w.as_slice().len() {
        return Err(Error::BadLength { rows: w.rows(), cols: w.cols(), len: keep.len() });
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::InvalidArgument("calibrated_scale needs at least one kept entry".into()));
    }
    let ss: f64 = w
        .as_slice()
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| v.as_f64() * v.as_f64())
        .sum();
    if !(ss > 0.0) {
        return Err(Error::InvalidArgument("kept entries are all zero".into()));
    }
    Ok((2.0 * n as f64 / ss).sqrt())
}

/// Closed-form magnitude-pruning factor `((√(2π) e^{nt²/2}) / (t n^{3/2}))^{1/2}`,
/// evaluated in log space.
pub fn magnitude_analytic_scale(n: usize, t: f64) -> f64 {
    let nf = n as f64;
    let log_sq = 0.5 * (2.0 * std::f64::consts::PI).ln() + nf * t * t / 2.0 - t.ln() - 1.5 * nf.ln();
    (0.5 * log_sq).exp()
}

/// Largest `n t²` for which the closed-form magnitude factor is claimed:
/// `t ≤ √((4 ln n − c ln ln n)/n)` for some `c > 7`.
pub fn magnitude_validity_limit(n: usize) -> f64 {
    let ln = (n as f64).ln();
    4.0 * ln - 7.0 * ln.ln()
}

/// Threshold solving `P(|w| ≤ t) = 1 − tail` for `w ~ N(0, 2/n)`:
/// `t = (2/√n) erf⁻¹(1 − tail)`, computed as `(2/√n) erfc⁻¹(tail)`.
pub fn threshold_from_tail(n: usize, tail: f64) -> Result<f64> {
    Ok(2.0 / (n as f64).sqrt() * erfc_inv(tail)?)
}

/// Top-r threshold `t = (2/√n) erf⁻¹(1 − r/(n²+1))`.
pub fn top_r_threshold(n: usize, r: usize) -> Result<f64> {
    let n2 = (n * n) as f64;
    threshold_from_tail(n, r as f64 / (n2 + 1.0))
}

fn finish<T: Scalar>(
    w: &DenseMatrix<T>,
    keep: Vec<bool>,
    scaling: Scaling,
    analytic: f64,
    meta: MaskMeta,
    threshold: Option<f64>,
    mut warnings: Vec<String>,
) -> Result<PrunedMask<T>> {
    let n = w.rows();
    let calibrated = calibrated_scale(w, &keep, n)?;
    let kept = keep.iter().filter(|&&k| k).count();
    let retention = kept as f64 / keep.len() as f64;
    let scale = match scaling {
        Scaling::Unscaled => 1.0,
        Scaling::Analytic => analytic,
        Scaling::Calibrated => calibrated,
        Scaling::RetentionFactor => retention.powf(-0.5),
    };
    if !scale.is_finite() {
        warnings.push(format!("{scaling} scale is not finite"));
        return Err(Error::InvalidArgument(format!("{scaling} scale overflows (value {scale})")));
    }
    let (pooled, max_row) = second_moment_stats(w, &keep, scale);
    let mask = Mask::from_pattern(w.rows(), w.cols(), &keep, T::of(scale), meta)?;
    Ok(PrunedMask {
        mask,
        report: ScaleReport {
            analytic,
            calibrated,
            ratio: analytic / calibrated,
            second_moment_stat: pooled,
            max_row_realized: max_row,
            warnings,
        },
        threshold,
    })
}

/// Pooled and max-row deviations of `½ Σ_k (b w)²` from 1 on one realization.
fn second_moment_stats<T: Scalar>(w: &DenseMatrix<T>, keep: &[bool], scale: f64) -> (f64, f64) {
    let (rows, cols) = w.shape();
    let s2 = scale * scale;
    let mut total = 0.0;
    let mut max_row: f64 = 0.0;
    for i in 0..rows {
        let row: f64 = w
            .row(i)
            .iter()
            .zip(&keep[i * cols..(i + 1) * cols])
            .filter(|(_, &k)| k)
            .map(|(v, _)| v.as_f64() * v.as_f64())
            .sum::<f64>()
            * s2
            / 2.0;
        total += row;
        max_row = max_row.max((row - 1.0).abs());
    }
    ((total / rows as f64 - 1.0).abs(), max_row)
}

/// Bernoulli keep pattern: entry kept when its uniform draw is below `1 − s`.
pub fn random_keep_pattern(rng: &mut RngStream, len: usize, s: f64) -> Result<Vec<bool>> {
    check_sparsity(s)?;
    let keep_prob = 1.0 - s;
    Ok((0..len).map(|_| rng.uniform() < keep_prob).collect())
}

/// Random pruning of `w` at sparsity `s`.
pub fn random_mask<T: Scalar>(rng: &mut RngStream, w: &DenseMatrix<T>, s: f64, scaling: Scaling) -> Result<PrunedMask<T>> {
    check_sparsity(s)?;
    let keep = random_keep_pattern(rng, w.as_slice().len(), s)?;
    let meta = MaskMeta { method: "random".into(), sparsity: Some(s), ..Default::default() };
    finish(w, keep, scaling, (1.0 - s).powf(-0.5), meta, None, Vec::new())
}

/// Keeps entries with `|w| > t`.
pub fn magnitude_mask_threshold<T: Scalar>(w: &DenseMatrix<T>, n: usize, t: f64, scaling: Scaling) -> Result<PrunedMask<T>> {
    check_threshold(t)?;
    let keep: Vec<bool> = w.as_slice().iter().map(|v| v.as_f64().abs() > t).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::EmptyMask { threshold: t });
    }
    let mut warnings = Vec::new();
    let nt2 = n as f64 * t * t;
    if scaling == Scaling::Analytic && nt2 > magnitude_validity_limit(n) {
        warnings.push(format!(
            "n t^2 = {nt2:.4} exceeds the closed-form validity limit {:.4}",
            magnitude_validity_limit(n)
        ));
    }
    let meta = MaskMeta { method: "magnitude_threshold".into(), threshold: Some(t), ..Default::default() };
    finish(w, keep, scaling, magnitude_analytic_scale(n, t), meta, Some(t), warnings)
}

/// Keeps the `r` largest `|w|`, ties broken by ascending row-major index.
/// The reported threshold is the solved `t`, not the realized order statistic.
pub fn magnitude_mask_top_r<T: Scalar>(w: &DenseMatrix<T>, n: usize, r: usize, scaling: Scaling) -> Result<PrunedMask<T>> {
    let len = w.as_slice().len();
    if r == 0 || r > len {
        return Err(Error::InvalidArgument(format!("r must lie in 1..={len}, got {r}")));
    }
    let keep = top_r_pattern(w, r);
    let t = top_r_threshold(n, r)?;
    let mut warnings = Vec::new();
    let nt2 = n as f64 * t * t;
    if scaling == Scaling::Analytic && nt2 > magnitude_validity_limit(n) {
        warnings.push(format!(
            "n t^2 = {nt2:.4} exceeds the closed-form validity limit {:.4}",
            magnitude_validity_limit(n)
        ));
    }
    let meta = MaskMeta {
        method: "magnitude_top_r".into(),
        sparsity: Some(1.0 - r as f64 / len as f64),
        threshold: Some(t),
        rank: Some(r),
    };
    finish(w, keep, scaling, magnitude_analytic_scale(n, t), meta, Some(t), warnings)
}

fn top_r_pattern<T: Scalar>(w: &DenseMatrix<T>, r: usize) -> Vec<bool> {
    let vals = w.as_slice();
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        vals[*b]
            .abs()
            .partial_cmp(&vals[*a].abs())
            .expect("finite weights")
            .then(a.cmp(b))
    };
    if r < idx.len() {
        idx.select_nth_unstable_by(r - 1, cmp);
    }
    let mut keep = vec![false; vals.len()];
    for &i in &idx[..r] {
        keep[i] = true;
    }
    keep
}

/// How far a sparsity level sits from the random-pruning stability boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeMargin {
    /// `(1 − s)·n / (ln n)⁴`; the sufficient condition asks for this to be large.
    pub margin: f64,
    /// `log₁₀(n)/n`, the retention level where breakdown is observed empirically.
    pub heuristic_level: f64,
    pub retention: f64,
}

pub fn edge_of_stability_margin(n: usize, s: f64) -> Result<EdgeMargin> {
    check_sparsity(s)?;
    if n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    let nf = n as f64;
    Ok(EdgeMargin { margin: (1.0 - s) * nf / nf.ln().powi(4), heuristic_level: nf.log10() / nf, retention: 1.0 - s })
}

/// Monte Carlo estimate of a mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// A max-over-cells condition statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionStat {
    /// `max |cell estimate − target|`, the literal condition quantity.
    pub max_abs: f64,
    /// Standard error of the cell attaining the maximum.
    pub max_abs_stderr: f64,
    /// Signed deviation of the cell-average from the target; mean zero when
    /// the condition holds exactly.
    pub pooled: Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionReport {
    /// `(ln⁴ n / n)·β_n²`.
    pub growth: Estimate,
    /// `max_i |½ Σ_k E|b_ik w_ik|² − 1|`.
    pub second_moment: ConditionStat,
    /// `n · max_ij |E[b_ij w_ij]|`.
    pub mean: ConditionStat,
    pub samples: usize,
}

fn mean_se(sum: f64, sumsq: f64, m: f64) -> (f64, f64) {
    let mean = sum / m;
    let var = ((sumsq - m * mean * mean) / (m - 1.0)).max(0.0);
    (mean, (var / m).sqrt())
}

/// Estimates the three stability-theorem quantities over `mc_samples`
/// independent `(W, B)` draws. `weight_sampler(i)` draws the `i`-th weight
/// matrix; `mask_sampler(i, &w)` builds its mask.
pub fn check_stability_conditions<T: Scalar>(
    mut weight_sampler: impl FnMut(usize) -> Result<DenseMatrix<T>>,
    mut mask_sampler: impl FnMut(usize, &DenseMatrix<T>) -> Result<Mask<T>>,
    n: usize,
    mc_samples: usize,
) -> Result<ConditionReport> {
    if mc_samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 Monte Carlo samples, got {mc_samples}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    let nf = n as f64;
    let growth_coef = nf.ln().powi(4) / nf;
    let (mut g_sum, mut g_sq) = (0.0, 0.0);
    let mut row_sum = vec![0.0; n];
    let mut row_sq = vec![0.0; n];
    let (mut rowavg_sum, mut rowavg_sq) = (0.0, 0.0);
    let mut ent_sum = vec![0.0; n * n];
    let mut ent_sq = vec![0.0; n * n];
    let (mut entavg_sum, mut entavg_sq) = (0.0, 0.0);

    for i in 0..mc_samples {
        let w = weight_sampler(i)?;
        if w.shape() != (n, n) {
            return Err(Error::InvalidArgument(format!("weight sample is {}x{}, expected {n}x{n}", w.rows(), w.cols())));
        }
        let mask = mask_sampler(i, &w)?;
        let bw = mask.matrix().hadamard(&w)?;
        let g = growth_coef * mask.beta_n().as_f64().powi(2);
        g_sum += g;
        g_sq += g * g;
        let mut rows_total = 0.0;
        for r in 0..n {
            let v: f64 = bw.row(r).iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>() / 2.0;
            row_sum[r] += v;
            row_sq[r] += v * v;
            rows_total += v;
        }
        let ra = rows_total / nf;
        rowavg_sum += ra;
        rowavg_sq += ra * ra;
        let mut ent_total = 0.0;
        for (k, x) in bw.as_slice().iter().enumerate() {
            let v = x.as_f64();
            ent_sum[k] += v;
            ent_sq[k] += v * v;
            ent_total += v;
        }
        let ea = ent_total / (nf * nf);
        entavg_sum += ea;
        entavg_sq += ea * ea;
    }

    let m = mc_samples as f64;
    let (g_mean, g_se) = mean_se(g_sum, g_sq, m);

    let max_cell = |sum: &[f64], sq: &[f64], target: f64, factor: f64| -> (f64, f64) {
        let mut best = (0.0f64, 0.0f64);
        for (s, q) in sum.iter().zip(sq) {
            let (mean, se) = mean_se(*s, *q, m);
            let dev = (factor * mean - target).abs();
            if dev >= best.0 {
                best = (dev, factor * se);
            }
        }
        best
    };
    let (second_max, second_se) = max_cell(&row_sum, &row_sq, 1.0, 1.0);
    let (ra_mean, ra_se) = mean_se(rowavg_sum, rowavg_sq, m);
    let (mean_max, mean_se_cell) = max_cell(&ent_sum, &ent_sq, 0.0, nf);
    let (ea_mean, ea_se) = mean_se(entavg_sum, entavg_sq, m);

    Ok(ConditionReport {
        growth: Estimate { value: g_mean, stderr: g_se },
        second_moment: ConditionStat {
            max_abs: second_max,
            max_abs_stderr: second_se,
            pooled: Estimate { value: ra_mean - 1.0, stderr: ra_se },
        },
        mean: ConditionStat {
            max_abs: mean_max,
            max_abs_stderr: mean_se_cell,
            pooled: Estimate { value: nf * ea_mean, stderr: nf * ea_se },
        },
        samples: mc_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{make_rng, sample_gaussian_matrix};

    type M = DenseMatrix<f64>;

    fn gaussian(n: usize, seed: u64) -> M {
        sample_gaussian_matrix(&mut make_rng(seed, 0), n, n, 2.0 / n as f64).unwrap()
    }

    #[test]
    fn random_no_pruning_is_all_ones() {
        let w = gaussian(16, 1);
        let p = random_mask(&mut make_rng(1, 1), &w, 0.0, Scaling::Analytic).unwrap();
        assert_eq!(p.mask.scale(), 1.0);
        assert_eq!(p.mask.kept_count(), 256);
        assert!(p.mask.matrix().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_analytic_factor() {
        let w = gaussian(32, 2);
        let p = random_mask(&mut make_rng(2, 1), &w, 0.75, Scaling::Analytic).unwrap();
        assert_eq!(p.mask.scale(), 2.0);
        assert!(p.mask.matrix().as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(p.mask.kept_count(), p.mask.matrix().count_nonzero());
        assert!(random_mask(&mut make_rng(2, 1), &w, 1.0, Scaling::Analytic).is_err());
    }

    #[test]
    fn threshold_above_max_is_empty() {
        let w = gaussian(8, 3);
        let t = w.max_abs() * 1.01;
        assert_eq!(
            magnitude_mask_threshold(&w, 8, t, Scaling::Calibrated).unwrap_err(),
            Error::EmptyMask { threshold: t }
        );
        assert!(magnitude_mask_threshold(&w, 8, 0.0, Scaling::Calibrated).is_err());
    }

    #[test]
    fn top_r_keep_all_and_bounds() {
        let w = gaussian(6, 4);
        let p = magnitude_mask_top_r(&w, 6, 36, Scaling::Unscaled).unwrap();
        assert_eq!(p.mask.kept_count(), 36);
        let t = p.threshold.unwrap();
        let expected = 2.0 / 6f64.sqrt() * erf_inv(1.0 / 37.0).unwrap();
        assert!((t - expected).abs() < 1e-15);
        assert!(t < 0.02);
        assert!(magnitude_mask_top_r(&w, 6, 0, Scaling::Unscaled).is_err());
        assert!(magnitude_mask_top_r(&w, 6, 37, Scaling::Unscaled).is_err());
    }

    #[test]
    fn top_r_ties_follow_row_major_order() {
        let w = M::from_rows(&[&[1.0, -2.0, 2.0], &[2.0, 0.5, -2.0], &[0.1, 2.0, 1.0]]);
        let p = magnitude_mask_top_r(&w, 3, 3, Scaling::Unscaled).unwrap();
        assert_eq!(p.mask.kept_count(), 3);
        let keep = p.mask.keep_pattern();
        assert_eq!(keep, vec![false, true, true, true, false, false, false, false, false]);
    }

    #[test]
    fn threshold_from_half_tail() {
        // √n / 2 = 1 at n = 4, so t = erf⁻¹(0.5)
        let t = threshold_from_tail(4, 0.5).unwrap();
        assert!((t - 0.476936).abs() < 1e-6);
        assert!((t - 0.47693627620446987).abs() < 1e-14);
    }

    #[test]
    fn calibrated_closed_form() {
        let v = 0.3;
        let w = M::from_fn(5, 5, |_, _| v);
        let s = calibrated_scale(&w, &[true; 25], 5).unwrap();
        assert!((s - (2.0 / (5.0 * v * v)).sqrt()).abs() < 1e-14);
        assert!(calibrated_scale(&w, &[false; 25], 5).is_err());
    }

    #[test]
    fn calibrated_pooled_statistic_is_zero() {
        let w = gaussian(64, 5);
        for p in [
            random_mask(&mut make_rng(5, 2), &w, 0.6, Scaling::Calibrated).unwrap(),
            magnitude_mask_top_r(&w, 64, 400, Scaling::Calibrated).unwrap(),
        ] {
            assert!(p.report.second_moment_stat < 1e-12);
            assert!(p.report.calibrated > 0.0 && p.report.ratio > 0.0);
        }
    }

    #[test]
    fn analytic_magnitude_factor_and_window() {
        let n = 256;
        let t = ((n as f64).ln() / n as f64).sqrt();
        let direct = ((2.0 * std::f64::consts::PI).sqrt() * (n as f64 * t * t / 2.0).exp()
            / (t * (n as f64).powf(1.5)))
        .sqrt();
        assert!((magnitude_analytic_scale(n, t) / direct - 1.0).abs() < 1e-12);
        let w = gaussian(n, 6);
        let big_t = (11.0 / n as f64).sqrt();
        let p = magnitude_mask_threshold(&w, n, big_t, Scaling::Analytic).unwrap();
        assert_eq!(p.report.warnings.len(), 1);
        let ok = magnitude_mask_threshold(&w, n, t, Scaling::Analytic).unwrap();
        assert!(ok.report.warnings.is_empty());
    }

    #[test]
    fn edge_margin_values() {
        let e = edge_of_stability_margin(256, 0.99).unwrap();
        assert!((e.margin - 0.0027).abs() < 5e-5);
        assert!((e.heuristic_level - 0.0094).abs() < 1e-4);
        let ln = 256f64.ln();
        assert_eq!(edge_of_stability_margin(256, 0.0).unwrap().margin, 256.0 / ln.powi(4));
        assert!(edge_of_stability_margin(256, 1.0).is_err());
    }

    #[test]
    fn sidecar_line_format() {
        let w = gaussian(4, 7);
        let p = random_mask(&mut make_rng(7, 7), &w, 0.75, Scaling::Analytic).unwrap();
        let line = p.mask.sidecar_line();
        assert!(line.starts_with("mask method=random s=0.75 t=na r=na scale=2 kept="), "{line}");
    }

    #[test]
    fn condition_checker_requires_samples() {
        let r = check_stability_conditions(|_| Ok(gaussian(4, 1)), |_, _| Ok(Mask::keep_all(4)), 4, 10);
        assert!(r.is_err());
    }

    #[test]
    fn top_r_resolution() {
        assert_eq!(TopR::Count(17).resolve(100), 17);
        let n = 64usize;
        let expected = (64.0 * 64f64.ln().powf(1.5)).ceil() as usize;
        assert_eq!(TopR::LogPower(1.5).resolve(n), expected);
    }
}
