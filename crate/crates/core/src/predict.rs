//! Pairwise posterior predictive tables for new covariate vectors.

use nalgebra::{DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{scaled_bivariate_log_orthant, std_normal_cdf, Sign};
use crate::stage1::BetaPosterior;
use crate::stage2::CorrPosterior;

/// Gaussian approximation to the two latent utilities at a new point and the
/// implied 2×2 outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPredictive {
    pub mu_t: Vector2<f64>,
    pub cov_t: Matrix2<f64>,
    /// Probabilities of `(y_j, y_k)` = (0,0), (0,1), (1,0), (1,1).
    pub cell_probs: [f64; 4],
}

impl PairPredictive {
    pub fn p00(&self) -> f64 {
        self.cell_probs[0]
    }

    pub fn p01(&self) -> f64 {
        self.cell_probs[1]
    }

    pub fn p10(&self) -> f64 {
        self.cell_probs[2]
    }

    pub fn p11(&self) -> f64 {
        self.cell_probs[3]
    }

    /// Predictive probabilities `P(y_j = 1)` and `P(y_k = 1)`.
    pub fn marginals(&self) -> (f64, f64) {
        (self.p10() + self.p11(), self.p01() + self.p11())
    }
}

fn check_point(post: &BetaPosterior, x_t: &DVector<f64>) -> Result<()> {
    if x_t.len() != post.dim() {
        return Err(Error::shape(format!(
            "covariate vector has {} entries, model {}",
            x_t.len(),
            post.dim()
        )));
    }
    if x_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("covariates must be finite"));
    }
    Ok(())
}

fn latent_moments(
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    corr: &CorrPosterior,
    x_t: &DVector<f64>,
) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    check_point(post_j, x_t)?;
    check_point(post_k, x_t)?;
    if !(corr.sigma_hat.abs() < 1.0) {
        return Err(Error::domain(format!(
            "correlation {} outside (-1,1)",
            corr.sigma_hat
        )));
    }
    let mu = Vector2::new(x_t.dot(&post_j.beta_hat), x_t.dot(&post_k.beta_hat));
    let vj = 1.0 + x_t.dot(&(&post_j.hessian_inv * x_t)).max(0.0);
    let vk = 1.0 + x_t.dot(&(&post_k.hessian_inv * x_t)).max(0.0);
    let cov = Matrix2::new(vj, corr.sigma_hat, corr.sigma_hat, vk);
    Ok((mu, cov))
}

/// Predictive table for outcomes `j` and `k` at `x_t`, with the correlation
/// plugged in at its posterior mean.
pub fn pairwise_predictive(
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    corr: &CorrPosterior,
    x_t: &DVector<f64>,
) -> Result<PairPredictive> {
    let (mu, cov) = latent_moments(post_j, post_k, corr, x_t)?;
    let mut cells = [0.0; 4];
    for (idx, (yj, yk)) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let lp = scaled_bivariate_log_orthant(
            mu[0],
            mu[1],
            cov[(0, 0)],
            cov[(1, 1)],
            cov[(0, 1)],
            Sign::from_outcome(yj),
            Sign::from_outcome(yk),
        )?;
        cells[idx] = lp.exp();
    }
    // the four orthants partition the plane; renormalize away rounding
    let total: f64 = cells.iter().sum();
    for c in &mut cells {
        *c /= total;
    }
    Ok(PairPredictive {
        mu_t: mu,
        cov_t: cov,
        cell_probs: cells,
    })
}

/// Univariate predictive `P(y_j = 1) = Φ(x_tᵀβ̂ / √(1 + x_tᵀHx_t))`.
pub fn marginal_predictive(post: &BetaPosterior, x_t: &DVector<f64>) -> Result<f64> {
    check_point(post, x_t)?;
    let v = 1.0 + x_t.dot(&(&post.hessian_inv * x_t)).max(0.0);
    Ok(std_normal_cdf(x_t.dot(&post.beta_hat) / v.sqrt()))
}

/// Class 1 when the predictive probability exceeds one half; ties go to 0.
pub fn predict_classes(predictive: &PairPredictive) -> (u8, u8) {
    let (a, b) = predictive.marginals();
    (u8::from(a > 0.5), u8::from(b > 0.5))
}

/// Sampling estimate of the table from `draws` latent draws.
pub fn pairwise_predictive_mc<R: Rng + ?Sized>(
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    corr: &CorrPosterior,
    x_t: &DVector<f64>,
    draws: usize,
    rng: &mut R,
) -> Result<PairPredictive> {
    if draws == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    let (mu, cov) = latent_moments(post_j, post_k, corr, x_t)?;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::numerical("predictive covariance is not positive definite"))?;
    let l = chol.l();
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let e = Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let z = mu + l * e;
        let cell = 2 * usize::from(z[0] > 0.0) + usize::from(z[1] > 0.0);
        counts[cell] += 1;
    }
    let cells = counts.map(|c| c as f64 / draws as f64);
    Ok(PairPredictive {
        mu_t: mu,
        cov_t: cov,
        cell_probs: cells,
    })
}
