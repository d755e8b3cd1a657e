//! Reduced alternating Schwarz method for parametric advection-diffusion
//! problems on a three-subdomain pipe decomposition.

pub mod analytic1d;
pub mod config;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod pod;
pub mod problem;
pub mod reduced;
pub mod rom;
pub mod schwarz;

pub use error::{Error, Result};
