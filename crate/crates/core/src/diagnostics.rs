//! Growth-rate fits, stability verdicts and the statistics used to check the
//! Bernoulli activation model.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::ForwardTrace;
use crate::scalar::Scalar;
use crate::special::erfc;

/// Default half-width of the stable band, nats per layer.
pub const DEFAULT_EPSILON: f64 = 0.02;
/// Default lower end of the fit window.
pub const DEFAULT_WINDOW_MIN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthFit {
    /// Nats per layer.
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub depth_window: (usize, usize),
    pub points_used: usize,
}

/// OLS fit of `log_norm` against `L` over points with `L` in `window`
/// (inclusive).
pub fn fit_growth_rate(points: &[(usize, f64)], window: (usize, usize)) -> Result<GrowthFit> {
    let sel: Vec<(f64, f64)> = points
        .iter()
        .filter(|(l, _)| *l >= window.0 && *l <= window.1)
        .map(|&(l, y)| (l as f64, y))
        .collect();
    if sel.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "growth fit needs >= 3 points in [{}, {}], got {}",
            window.0,
            window.1,
            sel.len()
        )));
    }
    if let Some(&(l, y)) = sel.iter().find(|(_, y)| !y.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite log-norm {y} at L = {l}")));
    }
    let m = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / m;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("growth fit needs at least two distinct depths".into()));
    }
    let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = sel.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(GrowthFit {
        slope,
        intercept,
        residual_rms: (rss / m).sqrt(),
        depth_window: window,
        points_used: sel.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StabilityClass {
    Vanishing,
    Stable,
    Exploding,
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityClass::Vanishing => "vanishing",
            StabilityClass::Stable => "stable",
            StabilityClass::Exploding => "exploding",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityVerdict {
    pub class: StabilityClass,
    pub slope: f64,
    pub epsilon: f64,
}

pub fn classify_stability(fit: &GrowthFit, epsilon: f64) -> StabilityVerdict {
    classify_slope(fit.slope, epsilon)
}

pub fn classify_slope(slope: f64, epsilon: f64) -> StabilityVerdict {
    assert!(epsilon > 0.0, "epsilon must be > 0");
    let class = if slope < -epsilon {
        StabilityClass::Vanishing
    } else if slope > epsilon {
        StabilityClass::Exploding
    } else {
        StabilityClass::Stable
    };
    StabilityVerdict { class, slope, epsilon }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliFraction {
    pub per_entry: Vec<f64>,
    pub pooled: f64,
    pub samples: usize,
}

/// Frequency of `D_l[i] = 1` per unit and pooled over all traces.
pub fn bernoulli_fraction<T: Scalar>(traces: &[ForwardTrace<T>], l: usize) -> Result<BernoulliFraction> {
    bernoulli_fraction_of(traces.iter().map(|t| t.indicators.get(l).map(Vec::as_slice)), l)
}

/// Same as [`bernoulli_fraction`] on raw indicator vectors.
pub fn bernoulli_fraction_of<'a>(
    rows: impl IntoIterator<Item = Option<&'a [bool]>>,
    l: usize,
) -> Result<BernoulliFraction> {
    let mut counts: Vec<u64> = Vec::new();
    let mut samples = 0usize;
    for row in rows {
        let row = row.ok_or(Error::LayerOutOfRange { index: l, depth: 0 })?;
        if samples == 0 {
            counts = vec![0; row.len()];
        } else if row.len() != counts.len() {
            return Err(Error::InvalidArgument("indicator vectors differ in width".into()));
        }
        for (c, &b) in counts.iter_mut().zip(row) {
            *c += u64::from(b);
        }
        samples += 1;
    }
    if samples == 0 || counts.is_empty() {
        return Err(Error::Empty("bernoulli_fraction needs at least one trace"));
    }
    let total: u64 = counts.iter().sum();
    Ok(BernoulliFraction {
        per_entry: counts.iter().map(|&c| c as f64 / samples as f64).collect(),
        pooled: total as f64 / (samples * counts.len()) as f64,
        samples,
    })
}

/// `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    /// Tallies paired boolean observations; rows index `x`, columns `y`,
    /// `true` first.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut t = Self::default();
        for (x, y) in pairs {
            match (x, y) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn transpose(&self) -> Self {
        Self { a: self.a, b: self.c, c: self.b, d: self.d }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chi2Result {
    pub chi2: f64,
    pub p_value: f64,
}

/// Pearson χ² for a 2×2 table (no continuity correction); the 1-dof survival
/// function is `erfc(√(χ²/2))`.
pub fn chi2_independence(t: &ContingencyTable2x2) -> Result<Chi2Result> {
    let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
    let marginals = [a + b, c + d, a + c, b + d];
    if marginals.iter().any(|&m| m == 0.0) {
        return Err(Error::InvalidArgument(format!("contingency table has a zero marginal: {t:?}")));
    }
    let n = a + b + c + d;
    let det = a * d - b * c;
    let chi2 = n * det * det / marginals.iter().product::<f64>();
    Ok(Chi2Result { chi2, p_value: erfc((chi2 / 2.0).sqrt()) })
}

/// `(T_W, T_D)`: fraction of positive entries of `w` and of ones in `D_l`.
pub fn activation_weight_stats<T: Scalar>(w: &DenseMatrix<T>, trace: &ForwardTrace<T>, l: usize) -> Result<(f64, f64)> {
    let d = trace.indicators.get(l).ok_or(Error::LayerOutOfRange { index: l, depth: trace.depth() })?;
    if w.is_empty() || d.is_empty() {
        return Err(Error::Empty("activation_weight_stats"));
    }
    let t_w = w.as_slice().iter().filter(|&&v| v > T::zero()).count() as f64 / w.as_slice().len() as f64;
    let t_d = d.iter().filter(|&&b| b).count() as f64 / d.len() as f64;
    Ok((t_w, t_d))
}

pub fn pearson_corr(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson_corr needs equal lengths >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson_corr: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_n − F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("ks_statistic"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("ks_statistic: NaN sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// KS distance to `U(0, 1)`.
pub fn ks_uniform(samples: &[f64]) -> Result<f64> {
    ks_statistic(samples, |x| x.clamp(0.0, 1.0))
}

/// KS distance to `N(0, 1)`.
pub fn ks_standard_normal(samples: &[f64]) -> Result<f64> {
    ks_statistic(samples, |x| 0.5 * erfc(-x / std::f64::consts::SQRT_2))
}

/// Asymptotic 1% critical value of the one-sample KS distance.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_geometric_fit() {
        let pts: Vec<_> = (1..=30).map(|l| (l, l as f64 * 2f64.ln())).collect();
        let fit = fit_growth_rate(&pts, (1, 30)).unwrap();
        assert!((fit.slope - std::f64::consts::LN_2).abs() < 1e-13);
        assert!(fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn flat_fit_and_window() {
        let pts: Vec<_> = (0..50).map(|l| (l, 3.5)).collect();
        let fit = fit_growth_rate(&pts, (20, 49)).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.residual_rms, 0.0);
        assert_eq!(fit.points_used, 30);
        assert!(fit_growth_rate(&pts[..22], (20, 49)).is_err());
        assert!(fit_growth_rate(&[(20, 0.0), (21, f64::NAN), (22, 0.0)], (0, 99)).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_slope(0.6931, 0.02).class, StabilityClass::Exploding);
        assert_eq!(classify_slope(-0.001, 0.02).class, StabilityClass::Stable);
        assert_eq!(classify_slope(-1.386, 0.02).class, StabilityClass::Vanishing);
        assert_eq!(classify_slope(0.02, 0.02).class, StabilityClass::Stable);
    }

    #[test]
    fn chi2_examples() {
        let r = chi2_independence(&ContingencyTable2x2::new(25, 25, 25, 25)).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi2_independence(&ContingencyTable2x2::new(30, 20, 20, 30)).unwrap();
        assert!((r.chi2 - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.0455).abs() < 5e-5);
        assert!(chi2_independence(&ContingencyTable2x2::new(0, 0, 3, 4)).is_err());
    }

    #[test]
    fn table_from_pairs() {
        let t = ContingencyTable2x2::from_pairs([(true, true), (true, false), (false, false), (false, false)]);
        assert_eq!(t, ContingencyTable2x2::new(1, 1, 0, 2));
        assert_eq!(t.total(), 4);
    }

    #[test]
    fn pearson_extremes() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_corr(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_corr(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson_corr(&xs, &[1.0; 10]).is_err());
        assert!(pearson_corr(&xs[..1], &xs[..1]).is_err());
    }

    #[test]
    fn bernoulli_forced_values() {
        let ones = [true; 4];
        let zeros = [false; 4];
        let f = bernoulli_fraction_of([Some(&ones[..]), Some(&ones[..])], 0).unwrap();
        assert_eq!(f.pooled, 1.0);
        let f = bernoulli_fraction_of([Some(&zeros[..])], 0).unwrap();
        assert_eq!(f.pooled, 0.0);
        assert!(bernoulli_fraction_of(std::iter::empty(), 0).is_err());
    }

    #[test]
    fn ks_on_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&xs).unwrap() - 0.005).abs() < 1e-12);
        assert!((ks_critical_1pct(10_000) - 0.01628).abs() < 1e-12);
    }
}
