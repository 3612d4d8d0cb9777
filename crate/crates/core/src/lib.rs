//! Empirical Bayes for the Poisson means problem via a Gamma-smoothed
//! nonparametric maximum likelihood estimator.
//!
//! The model is hierarchical: counts are Poisson given a latent mean, the
//! latent mean is Gamma(κ, λ) given a rate λ, and the rates follow an
//! unknown mixing measure. Fitting the mixing measure by maximum likelihood
//! on the induced negative-binomial mixture yields a smooth estimate of the
//! prior density, from which the crate derives posterior densities,
//! posterior-mean predictions, expected-length-optimal marginal coverage
//! sets, and an estimator of the minimal Gamma shape parameter.

pub mod coverage;
pub mod error;
pub mod mixture;
pub mod npmle;
pub mod quad;
pub mod rng;
pub mod shape;
pub mod simlab;
pub mod simplex;
pub mod special;

pub use error::{Error, Result};
pub use mixture::{CountSample, GammaMixtureModel, MixingMeasure};
pub use rng::Rng;
