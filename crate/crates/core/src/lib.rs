pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rl;
pub mod safety;
pub mod seed;
pub mod traffic;

pub use error::{Error, Result};
