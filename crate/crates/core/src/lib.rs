//! Global identification checks, simulation and quasi-ML estimation for
//! dynamic panels with interactive effects.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: the parameter point [`Theta`] and the matrices `B`, `Γ`, `L`,
//!   `Q`, `Ω`, `Σ(θ)`;
//! - [`poly`]: polynomials in the probe parameter `α̃` and their real roots;
//! - [`minors`]: exclusion minors and their determinants as polynomials;
//! - [`ident`]: identification verdicts per model variant;
//! - [`simulate`]: panel generation and sample moments;
//! - [`estimate`]: concentrated Gaussian quasi-ML;
//! - [`cli`]: the config-driven command-line front end.

pub mod cli;
pub mod draw;
pub mod error;
pub mod estimate;
pub mod ident;
pub mod linalg;
pub mod minors;
pub mod model;
pub mod optim;
pub mod par;
pub mod poly;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{DExtra, Normalization, Theta, Variant};
pub use poly::AlphaPoly;
