// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequential Bayesian change-point modelling with Kullback-Leibler tests.
//!
//! The crate is organised bottom-up:
//!
//! - [`expfam`]: conjugate exponential families, Bayes updates, moments
//!   and moment-matched transfer priors.
//! - [`kl`]: the KL change-point statistic, its simulated null
//!   distribution and the detection rule.
//! - [`engine`]: the sequential test-then-update loop and Student-t
//!   predictives for the Gaussian family.
//! - [`mv`]: a multivariate Gaussian model with Normal-inverse-Wishart
//!   priors fitted by Gibbs sampling.
//! - [`spike`]: a Bernoulli spiking-network model fitted by Metropolis.
//! - [`sim`]: the power / sample-size simulation study.

pub mod engine;
pub mod error;
pub mod expfam;
pub mod kl;
pub mod mv;
pub mod rng;
pub mod serde_float;
pub mod sim;
pub mod special;
pub mod spike;
pub mod stats;

pub use error::{Error, Result};
