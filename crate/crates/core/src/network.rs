//! Bias-free ReLU MLP: forward pass with activation recording, the
//! input–output Jacobian as a product of masked weights and activation
//! indicators, and a central finite-difference oracle for it.
//!
//! Preactivations are `Y_0 = W_in x` and `Y_k = (B_k ⊙ W_k) φ(Y_{k−1})` for
//! `k = 1..=L`, with `φ = ReLU` and `φ'(0) = 0`. The Jacobian
//! `J_k = ∂Y_L/∂Y_{k−1}` equals `F_L ⋯ F_k` with `F_l = (B_l ⊙ W_l) D_{l−1}`,
//! for every `k` in `1..=L` (`k = L` is the single factor `F_L`).

use std::borrow::Cow;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, ScaledMatrix, SpectralEstimate, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::pruning::Mask;
use crate::randomness::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    /// Output layer size; the Jacobian never uses it.
    pub output_dim: Option<usize>,
}

impl MlpConfig {
    pub fn new(input_dim: usize, width: usize, depth: usize) -> Result<Self> {
        let cfg = Self { input_dim, width, depth, output_dim: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_output(mut self, output_dim: usize) -> Self {
        self.output_dim = Some(output_dim);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "input_dim, width and depth must be >= 1 (got d={}, n={}, L={})",
                self.input_dim, self.width, self.depth
            )));
        }
        if self.output_dim == Some(0) {
            return Err(Error::InvalidArgument("output_dim must be >= 1 when present".into()));
        }
        Ok(())
    }
}

/// Weights of the MLP. `hidden[l - 1]` is `W_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T> {
    pub w_in: DenseMatrix<T>,
    pub hidden: Vec<DenseMatrix<T>>,
    pub w_out: Option<DenseMatrix<T>>,
    /// Elementwise masks for the hidden layers; `None` means all-ones.
    pub masks: Option<Vec<Mask<T>>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn new(w_in: DenseMatrix<T>, hidden: Vec<DenseMatrix<T>>) -> Self {
        Self { w_in, hidden, w_out: None, masks: None }
    }

    pub fn with_masks(mut self, masks: Vec<Mask<T>>) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn with_output(mut self, w_out: DenseMatrix<T>) -> Self {
        self.w_out = Some(w_out);
        self
    }

    /// Draws `W_in` and every hidden layer from fresh streams:
    /// `input_stream()` for `W_in` and `layer_stream(l)` for `W_l`.
    pub fn sample(
        config: &MlpConfig,
        input_variance: f64,
        mut input_stream: impl FnMut() -> RngStream,
        mut layer_stream: impl FnMut(usize) -> RngStream,
        mut sample_layer: impl FnMut(&mut RngStream) -> Result<DenseMatrix<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = input_stream();
        let w_in = crate::randomness::sample_gaussian_matrix(&mut rng, config.width, config.input_dim, input_variance)?;
        let hidden = (1..=config.depth)
            .map(|l| sample_layer(&mut layer_stream(l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(w_in, hidden))
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// `B_l ⊙ W_l` for 1-based `l`.
    pub fn effective_layer(&self, l: usize) -> Result<Cow<'_, DenseMatrix<T>>> {
        let w = &self.hidden[l - 1];
        match &self.masks {
            None => Ok(Cow::Borrowed(w)),
            Some(masks) => Ok(Cow::Owned(w.hadamard(masks[l - 1].matrix())?)),
        }
    }

    /// Checks every shape against `config`.
    pub fn check(&self, config: &MlpConfig) -> Result<()> {
        config.validate()?;
        let (n, d) = (config.width, config.input_dim);
        let bad = |what: &str, got: (usize, usize), want: (usize, usize)| {
            Error::InvalidArgument(format!("{what} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
        };
        if self.w_in.shape() != (n, d) {
            return Err(bad("w_in", self.w_in.shape(), (n, d)));
        }
        if self.hidden.len() != config.depth {
            return Err(Error::InvalidArgument(format!(
                "{} hidden layers, expected {}",
                self.hidden.len(),
                config.depth
            )));
        }
        for (i, w) in self.hidden.iter().enumerate() {
            if w.shape() != (n, n) {
                return Err(bad(&format!("hidden[{}]", i + 1), w.shape(), (n, n)));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != config.depth {
                return Err(Error::InvalidArgument(format!("{} masks, expected {}", masks.len(), config.depth)));
            }
            for (i, m) in masks.iter().enumerate() {
                if m.matrix().shape() != (n, n) {
                    return Err(bad(&format!("mask[{}]", i + 1), m.matrix().shape(), (n, n)));
                }
            }
        }
        match (config.output_dim, &self.w_out) {
            (Some(o), Some(w)) if w.shape() != (o, n) => return Err(bad("w_out", w.shape(), (o, n))),
            (Some(_), None) => return Err(Error::InvalidArgument("config has an output layer but w_out is missing".into())),
            _ => {}
        }
        Ok(())
    }
}

/// Everything the forward pass saw for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// `Y_0 … Y_L`.
    pub preactivations: Vec<Vec<T>>,
    /// `D_0 … D_L` as booleans: `D_k[i] = Y_k[i] > 0`. `D_L` only feeds the
    /// output layer.
    pub indicators: Vec<Vec<bool>>,
    pub output: Option<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn depth(&self) -> usize {
        self.preactivations.len() - 1
    }

    /// Diagonal of `D_k` as 0/1 scalars.
    pub fn indicator_values(&self, k: usize) -> Vec<T> {
        self.indicators[k].iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }
}

#[inline]
fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect()
}

fn positivity<T: Scalar>(v: &[T]) -> Vec<bool> {
    v.iter().map(|&x| x > T::zero()).collect()
}

fn check_finite<T: Scalar>(v: &[T], layer: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { layer })
    }
}

pub fn forward<T: Scalar>(config: &MlpConfig, weights: &NetworkWeights<T>, x: &[T]) -> Result<ForwardTrace<T>> {
    weights.check(config)?;
    if x.len() != config.input_dim {
        return Err(Error::InvalidArgument(format!(
            "input has length {}, expected {}",
            x.len(),
            config.input_dim
        )));
    }
    let y0 = weights.w_in.matvec_unchecked(x);
    check_finite(&y0, 0)?;
    let mut pre = Vec::with_capacity(config.depth + 1);
    let mut ind = Vec::with_capacity(config.depth + 1);
    ind.push(positivity(&y0));
    pre.push(y0);
    for l in 1..=config.depth {
        let w = weights.effective_layer(l)?;
        let y = w.matvec_unchecked(&relu(&pre[l - 1]));
        check_finite(&y, l)?;
        ind.push(positivity(&y));
        pre.push(y);
    }
    let output = weights.w_out.as_ref().map(|w| w.matvec_unchecked(&relu(&pre[config.depth])));
    Ok(ForwardTrace { preactivations: pre, indicators: ind, output })
}

/// `F_l = (B_l ⊙ W_l) · D_{l−1}`.
pub fn jacobian_factor<T: Scalar>(trace: &ForwardTrace<T>, weights: &NetworkWeights<T>, l: usize) -> Result<DenseMatrix<T>> {
    weights.effective_layer(l)?.scale_columns(&trace.indicator_values(l - 1))
}

/// `J_k = F_L ⋯ F_k` in log-scaled form.
pub fn jacobian<T: Scalar>(trace: &ForwardTrace<T>, weights: &NetworkWeights<T>, k: usize) -> Result<ScaledMatrix<T>> {
    let depth = weights.depth();
    if k == 0 || k > depth || trace.depth() < depth {
        return Err(Error::LayerOutOfRange { index: k, depth });
    }
    let mut acc = ScaledMatrix::from_factor(jacobian_factor(trace, weights, k)?);
    for l in k + 1..=depth {
        acc.left_multiply(&jacobian_factor(trace, weights, l)?)?;
    }
    Ok(acc)
}

/// `ln ‖J_1‖` for input `x`; `-inf` when the Jacobian vanishes.
pub fn jacobian_log_norm<T: Scalar>(config: &MlpConfig, weights: &NetworkWeights<T>, x: &[T]) -> Result<T> {
    Ok(jacobian_log_norm_with(config, weights, x, T::of(DEFAULT_TOL), DEFAULT_MAX_ITER)?.0)
}

pub fn jacobian_log_norm_with<T: Scalar>(
    config: &MlpConfig,
    weights: &NetworkWeights<T>,
    x: &[T],
    tol: T,
    max_iter: usize,
) -> Result<(T, SpectralEstimate<T>)> {
    let trace = forward(config, weights, x)?;
    jacobian(&trace, weights, 1)?.log_spectral_norm(tol, max_iter)
}

/// One point of a depth profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfilePoint<T> {
    pub depth: usize,
    pub log_norm: T,
    pub estimate: SpectralEstimate<T>,
}

/// `ln ‖J_1‖` of every depth-`L` prefix network for `L` in `depths`.
///
/// The first `L` layers of a deeper network form a depth-`L` network with the
/// same activations, so one pass over `weights` yields the whole profile. Each
/// value equals [`jacobian_log_norm_with`] on the truncated network bit for bit.
pub fn jacobian_log_norm_profile<T: Scalar>(
    config: &MlpConfig,
    weights: &NetworkWeights<T>,
    x: &[T],
    depths: &[usize],
    tol: T,
    max_iter: usize,
) -> Result<Vec<ProfilePoint<T>>> {
    if let Some(&bad) = depths.iter().find(|&&d| d == 0 || d > config.depth) {
        return Err(Error::LayerOutOfRange { index: bad, depth: config.depth });
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("depths must be strictly ascending".into()));
    }
    let trace = forward(config, weights, x)?;
    let mut out = Vec::with_capacity(depths.len());
    let mut acc = ScaledMatrix::from_factor(jacobian_factor(&trace, weights, 1)?);
    let mut targets = depths.iter().peekable();
    for l in 1..=config.depth {
        if l > 1 {
            acc.left_multiply(&jacobian_factor(&trace, weights, l)?)?;
        }
        if targets.peek() == Some(&&l) {
            targets.next();
            let (log_norm, estimate) = acc.log_spectral_norm(tol, max_iter)?;
            out.push(ProfilePoint { depth: l, log_norm, estimate });
        }
        if targets.peek().is_none() {
            break;
        }
    }
    Ok(out)
}

/// Layers `k..=L` applied to a given `Y_{k−1}`.
fn propagate_from<T: Scalar>(weights: &NetworkWeights<T>, k: usize, y_prev: &[T]) -> Result<Vec<T>> {
    let mut y = y_prev.to_vec();
    for l in k..=weights.depth() {
        y = weights.effective_layer(l)?.matvec_unchecked(&relu(&y));
    }
    Ok(y)
}

/// Central finite differences of `Y_L` with respect to `Y_{k−1}`.
///
/// Fails with [`Error::KinkProximity`] when any of `Y_{k−1} … Y_{L−1}` has a
/// coordinate within `10·eps` of zero, since a perturbation could then cross
/// a ReLU kink.
pub fn finite_difference_jacobian<T: Scalar>(
    config: &MlpConfig,
    weights: &NetworkWeights<T>,
    x: &[T],
    k: usize,
    eps: T,
) -> Result<DenseMatrix<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if k == 0 || k > config.depth {
        return Err(Error::LayerOutOfRange { index: k, depth: config.depth });
    }
    let trace = forward(config, weights, x)?;
    let margin = T::of(10.0) * eps;
    for layer in k - 1..config.depth {
        for (unit, &v) in trace.preactivations[layer].iter().enumerate() {
            if v.abs() <= margin {
                return Err(Error::KinkProximity { layer, unit, value: v.as_f64(), margin: margin.as_f64() });
            }
        }
    }
    let n = config.width;
    let base = &trace.preactivations[k - 1];
    let two_eps = eps + eps;
    let mut out = DenseMatrix::zeros(n, n);
    let mut probe = base.clone();
    for j in 0..n {
        probe[j] = base[j] + eps;
        let plus = propagate_from(weights, k, &probe)?;
        probe[j] = base[j] - eps;
        let minus = propagate_from(weights, k, &probe)?;
        probe[j] = base[j];
        for i in 0..n {
            out.set(i, j, (plus[i] - minus[i]) / two_eps);
        }
    }
    Ok(out)
}

/// Standard Gaussian input rescaled to Euclidean norm `√d`.
pub fn synthetic_input<T: Scalar>(rng: &mut RngStream, d: usize) -> Vec<T> {
    let raw: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = (d as f64).sqrt();
    raw.into_iter().map(|v| T::of(v * target / norm)).collect()
}

/// Reads an input vector: one decimal real per non-empty line, exactly `d`.
pub fn read_input_vector<T: Scalar, R: BufRead>(reader: R, d: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(d);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::Format(format!("line {}: not a number: {tok:?}", lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::Format(format!("line {}: non-finite value", lineno + 1)));
        }
        out.push(T::of(v));
    }
    if out.len() != d {
        return Err(Error::Format(format!("input vector has {} entries, expected {d}", out.len())));
    }
    Ok(out)
}
