//! Maximum-likelihood reconstruction of quantum states, quantum processes,
//! and of unknown probe states together with the process acting on them.
//!
//! All estimators are fixed-point iterations whose iterates stay physical:
//! density matrices remain positive with unit trace, Choi operators remain
//! positive and trace preserving.

pub mod approx;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod fixedpoint;
pub mod joint;
pub mod linalg;
pub mod objects;
pub mod process;
pub mod sim;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
