//! Feasibility probabilities for flow networks with random boundary data and
//! chance-constrained bound optimization.
//!
//! The crate computes the probability that random demands (stationary gas
//! networks) or random contaminant injections (dynamic transport networks)
//! keep the network state inside box constraints, using three estimators:
//! spheric radial decomposition, kernel density estimation with closed-form
//! erf box probabilities, and plain Monte Carlo. On top of the estimators it
//! solves minimal-bound problems under a probability level with analytic
//! gradients and verifies the resulting KKT systems.

pub mod error;
pub mod kde;
pub mod monte_carlo;
pub mod network;
pub mod optimizer;
pub mod pipeline;
pub mod scenario;
pub mod special;
pub mod srd;
pub mod steady;
pub mod stochastic;
pub mod transport;

pub use error::{Error, Result};
pub use monte_carlo::{Method, ProbabilityEstimate};
pub use network::{CompressorOrientation, Network};
pub use steady::SteadyState;
