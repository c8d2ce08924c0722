//! Compressive classification of low-rank Gaussian sources.
//!
//! Classes are zero-mean Gaussians `x ~ N(0, Σ_i)` with low-rank `Σ_i`,
//! observed through a linear kernel as `y = Φx + n`, `n ~ N(0, σ²I)`.
//! The crate computes rank-based diversity orders and expansion constants of
//! the union Bhattacharyya bound, designs kernels from the class null spaces,
//! and estimates the MAP error probability by Monte Carlo.

pub mod analysis;
pub mod classifier;
pub mod config;
pub mod design;
pub mod error;
pub mod io;
pub mod ip;
pub mod model;
pub mod numerics;
pub mod sim;

pub use error::{Error, Result};
