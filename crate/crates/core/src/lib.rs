//! Two-stage approximate Bayesian inference for multivariate probit models
//! with many binary outcomes.
//!
//! The pipeline fits every outcome's marginal probit regression by MAP plus a
//! Laplace approximation ([`stage1`]), then computes the posterior mean and
//! variance of each pairwise latent correlation by quadrature of a bivariate
//! probit likelihood that carries the first-stage uncertainty ([`stage2`]).
//! Both stages are embarrassingly parallel over outcomes and pairs.
//!
//! [`hierarchical`] adds empirical-Bayes shrinkage of the coefficients and
//! correlations, [`predict`] gives pairwise predictive tables, [`simulate`]
//! generates synthetic data and [`oracle`] holds slow reference computations
//! used for verification.

pub mod data;
pub mod error;
pub mod hierarchical;
pub mod linalg;
pub mod numerics;
pub mod oracle;
pub mod parallel;
pub mod predict;
pub mod priors;
pub mod rng;
pub mod simulate;
pub mod stage1;
pub mod stage2;

pub use data::Dataset;
pub use error::{Error, Result};
pub use priors::{BetaPrior, CorrPrior};
pub use stage1::{BetaPosterior, NewtonOptions};
pub use stage2::{CorrPosterior, PairTable, Stage2Options};
