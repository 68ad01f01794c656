//! Gradient-free federated learning of a Bayesian Gaussian mixture model.
//!
//! A coordinator proposes mixture parameters from a Normal-Inverse-Wishart /
//! Dirichlet prior, simulates one summary-space sample per proposal and ships
//! the samples to sites. Each site answers with squared Euclidean
//! discrepancies against its own frozen summary statistics, produced by a
//! supervised autoencoder. The coordinator keeps the `L` proposals with the
//! smallest discrepancies, which yields exactly the posterior that centralized
//! ABC rejection sampling would produce on the concatenated data.
//!
//! Module map:
//!
//! * [`samplers`]: seedable streams, dense linear algebra and the random
//!   variate generators.
//! * [`gmm`]: mixture density, sampling and the conjugate prior.
//! * [`suffiae`]: the supervised autoencoder and its exact gradients.
//! * [`abc`]: centralized rejection sampling, the oracle for federation.
//! * [`federation`]: wire protocol, transports, coordinator and site roles.
//! * [`eval`]: logistic regression, AUC, F1 and cut-off selection.
//! * [`experiment`]: configuration, datasets and scenario runners used by
//!   the `graffl` binary.

pub mod abc;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod federation;
pub mod gmm;
pub mod samplers;
pub mod suffiae;

pub use error::{Error, Result};
pub use samplers::{Matrix, RngStream};
