//! Jacobian spectral norms of deep ReLU networks at initialization.
//!
//! The crate covers the numerical side: dense linear algebra with an
//! overflow-safe product accumulator, reproducible Gaussian ensembles (i.i.d.
//! and correlated), the forward pass and input-output Jacobian of a bias-free
//! ReLU MLP, random and magnitude pruning masks with their rescaling factors,
//! and the statistics used to classify depth profiles.
//!
//! Everything numerical is generic over [`Scalar`] (`f64` or `f32`); the
//! aliases below fix the scalar for the common cases.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod network;
pub mod pruning;
pub mod randomness;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{accumulate_product, spectral_norm, svd_reference, DenseMatrix, ScaledMatrix, SpectralEstimate};
pub use network::{forward, jacobian, jacobian_log_norm, jacobian_log_norm_profile, ForwardTrace, MlpConfig, NetworkWeights};
pub use pruning::{Mask, PruningMethod, PruningSpec, Scaling};
pub use randomness::{make_rng, stream_id, Ensemble, EnsembleSpec, RngStream};
pub use scalar::Scalar;

pub type Matrix = DenseMatrix<f64>;
pub type Matrix32 = DenseMatrix<f32>;
pub type Scaled = ScaledMatrix<f64>;
pub type Scaled32 = ScaledMatrix<f32>;
pub type Weights = NetworkWeights<f64>;
pub type Weights32 = NetworkWeights<f32>;
pub type Trace = ForwardTrace<f64>;
pub type Trace32 = ForwardTrace<f32>;
pub type MaskF64 = Mask<f64>;
pub type MaskF32 = Mask<f32>;
