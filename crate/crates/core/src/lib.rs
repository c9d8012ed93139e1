//! Multi-domain identity-preserving image translation feeding a four-stream
//! verification + identification re-identification trainer.
//!
//! Everything is built on the small reverse-mode differentiation engine in
//! [`autodiff`]; there is no external tensor framework.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod gradsuite;
pub mod nn;
pub mod optim;
pub mod orchestrator;
pub mod persist;
pub mod reid;
pub mod rng;

pub use error::{Error, Result};
