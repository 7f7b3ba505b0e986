//! Data-efficient model-based policy search.
//!
//! A Gaussian-process model of the system dynamics is learned from recorded episodes. State
//! distributions are propagated through the model and a bounded feedback policy analytically,
//! which gives the expected long-term cost of the policy together with its exact gradient.
//! The policy is then improved with a quasi-Newton optimizer, applied to the system, and the
//! new data is added to the model.

pub mod cost;
pub mod env;
pub mod error;
mod expansion;
pub mod features;
pub mod gp;
pub mod inference;
pub mod optimizer;
pub mod policy;
pub mod rollout;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod tangent;
pub mod verify;

pub use error::{Error, Result};
pub use gaussian::GaussianBelief;
