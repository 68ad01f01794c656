//! Seedable sampling and the small dense linear-algebra kernel shared by the
//! rest of the crate.

mod distributions;
mod linalg;
mod rng;

pub use distributions::{
    sample_categorical, sample_chi_squared, sample_dirichlet, sample_gamma,
    sample_inverse_wishart, sample_mvn, sample_mvn_with_factor,
};
pub use linalg::{cholesky, Matrix};
pub use rng::RngStream;
