//! Distortion bounds for sending two correlated sources that share a
//! Gács-Körner common part over a two-user multiple-access channel.
//!
//! The crate covers the quadratic Gaussian case (hybrid-coding and uncoded
//! inner bounds, the maximal-correlation outer bound), finite-alphabet
//! evaluation of the general single-letter region and its special cases,
//! and exact correlation measures used by the converse.

pub mod correlation;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod hybrid;
pub mod linalg;
pub mod outer;
pub mod pmf;
pub mod search;
pub mod sweep;

pub use error::{Error, Result};
pub use gaussian::{GaussianProblem, LabeledCovariance, SourceDecomposition};
pub use hybrid::{HybridEvaluation, HybridParams, UncodedGains};
pub use pmf::JointPmf;
