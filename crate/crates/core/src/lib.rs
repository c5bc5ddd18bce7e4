//! Desk-scale denoising diffusion models on vector data.
//!
//! The crate implements discrete-time Gaussian diffusion with pluggable
//! reverse-process parameterizations (noise, image, mean), ancestral and
//! deterministic (DDIM) samplers, and the representation-conditional model
//! family: LRDM (a latent diffusion model conditioned on a KL-regularized
//! encoder), its timestep-conditional variant t-LRDM, and the degenerate
//! LVAE trained only at the terminal timestep. Networks are small dense
//! perceptrons trained with a built-in reverse-mode differentiation engine,
//! so every gradient can be verified against finite differences.

pub mod autodiff;
pub mod bundle;
pub mod analysis;
pub mod data;
pub mod error;
pub mod models;
pub mod objectives;
pub mod process;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
