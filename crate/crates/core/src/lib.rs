//! Capacity-constrained targeting of remote patient monitoring messages.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod pipeline;
pub mod policy;
pub mod representations;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
