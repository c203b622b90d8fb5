//! Finite-preview ℓ2-gain state feedback for linear time-varying systems.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lifting;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod sim;
pub mod spd;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{ModelProvider, ModelSource, StepData};
pub use spd::SpdMatrix;
