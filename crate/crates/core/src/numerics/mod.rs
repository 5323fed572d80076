//! Dense linear algebra, distributions, seeded randomness, and a
//! finite-difference gradient used as a test oracle throughout the crate.

mod diff;
mod dist;
mod linalg;
mod matrix;
mod rng;

pub use diff::finite_diff_grad;
pub use dist::{chi2_sf, std_normal_cdf, std_normal_quantile, std_normal_sf};
pub use linalg::{
    cholesky, sym_eigen, sym_inv_sqrt, sym_pinv, svd, SpectralDecomp, Svd, MAX_SWEEPS,
};
pub use matrix::Matrix;
pub use rng::Rng;
