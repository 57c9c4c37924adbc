//! Weak adversarial network solvers for parabolic PDEs with DNN and XNODE
//! primal models, on fixed and time-varying spatial domains.

pub mod domain;
pub mod error;
pub mod jet;
pub mod nets;
pub mod primal;
pub mod problem;
pub mod trainer;
pub mod weakform;
pub mod xnode;

pub use error::{Error, Result};
