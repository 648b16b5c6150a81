//! Stochastic transceiver optimization for multi-tag symbiotic radio.

pub mod baselines;
pub mod bspd;
pub mod channel;
pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod linalg;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod settings;
pub mod sinr;
pub mod solvers;
pub mod surrogate;

pub use error::{Error, Result};
