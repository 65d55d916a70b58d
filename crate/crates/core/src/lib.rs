//! Spectral Galerkin engine for stochastic fluid models on the periodic torus.
//!
//! Six models share the abstract form
//! `dΦ + (𝒜Φ + ℬ(Φ) + ℛ(Φ)) dt = Σ_k g_k(Φ) dβ_k`: convective
//! Brinkman–Forchheimer, MHD, Boussinesq, convective dynamo,
//! magneto-micropolar and the diffusive tropical climate model. States
//! live on a truncated Fourier basis; nonlinear terms are evaluated
//! pseudo-spectrally with exact dealiasing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod models;
pub mod noise;
pub mod run;
pub mod sde;
pub mod spectral;
pub mod state;
pub mod transform;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
