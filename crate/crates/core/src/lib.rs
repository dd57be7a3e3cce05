//! Gaussian-process tools for piecewise-stationary time series.
//!
//! The centrepiece is the Markov Region Link (MRL) construction in [`mrl`]:
//! independent stationary kernels, one per region, are joined into a single
//! global prior by conditioning every region on a shared covariance at the
//! change-points between them. Functions drawn from the result stay continuous
//! across boundaries (and optionally keep a continuous first derivative), even
//! when neighbouring regions use different kernel families.
//!
//! On top of that sit
//!
//! * [`gp`]: posterior inference, the dual real/fault posterior, log evidence and prior sampling;
//! * [`faults`]: bias, drift and drift-then-bias fault priors, batch fault removal and the on-line filter;
//! * [`hyper`]: prior-as-proposal importance sampling over hyperparameters;
//! * [`separation`]: additive separation of a smooth signal and a windowed artifact;
//! * [`simulate`]: seeded synthetic scenarios.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod faults;
pub mod gp;
pub mod hyper;
pub mod kernels;
pub mod linalg;
pub mod mrl;
pub mod separation;
pub mod simulate;

pub use error::{Error, Result};
pub use faults::{FaultKind, FaultPriors, FaultRemovalResult, FaultSpec, RemovalConfig};
pub use gp::{PosteriorEstimate, TimeSeries};
pub use hyper::{HyperPosterior, Prior, PriorSet};
pub use kernels::{Covariance, GramMatrix, KernelSpec, LengthScaleTable};
pub use mrl::{Link, MrlKernel, RegionModel};
pub use separation::{SeparationModel, SeparationPriors, SeparationResult};
pub use simulate::Scenario;

pub(crate) fn rng_from_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
