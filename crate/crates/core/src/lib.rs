//! Nonparametric Volterra kernels model (NVKM).
//!
//! Outputs are modelled as a truncated Volterra series of a latent (or
//! observed) input process, with every Volterra kernel a Gaussian-process
//! sample under a decaying squared-exponential covariance. Samples of the
//! outputs are computed in closed form from explicit pathwise GP samples, and
//! the variational inducing-point posteriors are fitted by doubly stochastic
//! variational inference.

pub mod data;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod pathwise;
pub mod volterra;

pub use error::{NvkmError, Result};
