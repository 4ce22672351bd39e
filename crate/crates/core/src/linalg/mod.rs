//! Dense matrices, overflow-safe products and spectral norms.

mod dense;
mod product;
mod spectral;

pub use dense::{DenseMatrix, BINARY_MAGIC};
pub use product::{accumulate_product, ScaledMatrix};
pub use spectral::{
    spectral_norm, svd_reference, SpectralEstimate, DEFAULT_MAX_ITER, DEFAULT_TOL, SVD_REFERENCE_MAX_DIM,
};
