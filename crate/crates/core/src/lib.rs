//! Claim verification over claim-evidence graphs with two causal adjustments:
//! a back-door stage that dilutes noisy evidence and a front-door stage that
//! routes the prediction through reasoning paths and subtracts a dataset bias
//! estimate.
//!
//! The crate carries its own small reverse-mode autodiff ([`autodiff::Tape`])
//! so the whole pipeline trains on a CPU with no external ML runtime.

pub mod autodiff;
pub mod backdoor;
pub mod datagen;
pub mod encoder;
pub mod frontdoor;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod params;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_params, GradReport};
pub use params::{Bound, ParamStore};
pub use tensor::{Scalar, Tensor};
