//! Priors on regression coefficients and on single pairwise correlations.
//!
//! Only marginal priors on individual correlations are ever needed, so
//! [`CorrPrior`] carries the closed-form single-entry marginals of the usual
//! joint correlation-matrix priors. All densities are normalized on (-1, 1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, spd_inverse};
use crate::numerics::LN_SQRT_2PI;

/// Gaussian prior `N(mean, covariance)` on one outcome's coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det_cov: f64,
}

impl BetaPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::shape(format!(
                "prior covariance is {}x{}, mean has length {p}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("prior parameters must be finite"));
        }
        let scale = covariance.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if asymmetry(&covariance) > 1e-12 * scale {
            return Err(Error::domain("prior covariance is not symmetric"));
        }
        let chol = nalgebra::Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::domain("prior covariance is not positive definite"))?;
        let log_det_cov = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = spd_inverse(&covariance)?;
        Ok(BetaPrior {
            mean,
            covariance,
            precision,
            log_det_cov,
        })
    }

    /// `N(mean·1, variance·I)` in dimension `p`.
    pub fn isotropic(p: usize, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::domain(format!(
                "prior variance {variance} must be positive"
            )));
        }
        Self::new(
            DVector::from_element(p, mean),
            DMatrix::identity(p, p) * variance,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        let d = beta - &self.mean;
        let quad = d.dot(&(&self.precision * &d));
        -0.5 * quad - 0.5 * self.log_det_cov - self.dim() as f64 * LN_SQRT_2PI
    }
}

/// Marginal prior on one correlation σ ∈ (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrPrior {
    /// Uniform on (-1, 1).
    Uniform,
    /// Marginal of the LKJ(ν) prior in dimension q: (σ+1)/2 ~ Beta(ν+q/2-1, ν+q/2-1).
    LkjMarginal { nu: f64, q: usize },
    /// Marginal under an inverse-Wishart(ν) prior with diagonal scale in
    /// dimension q: density ∝ (1-σ²)^((ν-2q)/2 - 1).
    IwMarginal { nu: f64, q: usize },
    /// Marginal under the Huang–Wand prior. With `symmetric = false` the
    /// density is ∝ (1-σ)^(ν/2-1); with `symmetric = true` it is
    /// ∝ (1-σ²)^(ν/2-1), which is uniform at ν = 2.
    HwMarginal { nu: f64, symmetric: bool },
    /// Gaussian N(0, ω²) on the Fisher transform atanh(σ), expressed as a
    /// density on σ.
    FisherGaussian { omega: f64 },
}

impl CorrPrior {
    pub fn lkj(nu: f64, q: usize) -> Result<Self> {
        let p = CorrPrior::LkjMarginal { nu, q };
        p.validate()?;
        Ok(p)
    }

    pub fn inverse_wishart(nu: f64, q: usize) -> Result<Self> {
        let p = CorrPrior::IwMarginal { nu, q };
        p.validate()?;
        Ok(p)
    }

    pub fn huang_wand(nu: f64, symmetric: bool) -> Result<Self> {
        let p = CorrPrior::HwMarginal { nu, symmetric };
        p.validate()?;
        Ok(p)
    }

    pub fn fisher_gaussian(omega: f64) -> Result<Self> {
        let p = CorrPrior::FisherGaussian { omega };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CorrPrior::Uniform => Ok(()),
            CorrPrior::LkjMarginal { nu, q } => {
                if !(nu > 0.0) || q < 2 {
                    return Err(Error::domain(format!(
                        "LKJ marginal needs nu > 0 and q >= 2 (nu={nu}, q={q})"
                    )));
                }
                if !(nu + q as f64 / 2.0 - 1.0 > 0.0) {
                    return Err(Error::domain("LKJ marginal needs nu + q/2 - 1 > 0"));
                }
                Ok(())
            }
            CorrPrior::IwMarginal { nu, q } => {
                if q < 2 || !nu.is_finite() {
                    return Err(Error::domain("inverse-Wishart marginal needs q >= 2"));
                }
                // (1-σ²)^a is integrable on (-1,1) only for a > -1
                if !(Self::iw_exponent(nu, q) > -1.0) {
                    return Err(Error::domain(format!(
                        "inverse-Wishart marginal is improper for nu={nu}, q={q} (needs nu > 2q)"
                    )));
                }
                Ok(())
            }
            CorrPrior::HwMarginal { nu, .. } => {
                if !(nu > 0.0) || !nu.is_finite() {
                    return Err(Error::domain(format!(
                        "Huang–Wand marginal needs nu > 0 (nu={nu})"
                    )));
                }
                Ok(())
            }
            CorrPrior::FisherGaussian { omega } => {
                if !(omega > 0.0) || !omega.is_finite() {
                    return Err(Error::domain(format!(
                        "Fisher-Gaussian prior needs omega > 0 (omega={omega})"
                    )));
                }
                Ok(())
            }
        }
    }

    fn iw_exponent(nu: f64, q: usize) -> f64 {
        (nu - 2.0 * q as f64) / 2.0 - 1.0
    }

    /// Log density at `sigma`.
    pub fn log_density(&self, sigma: f64) -> Result<f64> {
        if !(sigma.abs() < 1.0) {
            return Err(Error::domain(format!("correlation {sigma} outside (-1,1)")));
        }
        self.validate()?;
        Ok(self.log_density_unchecked(sigma))
    }

    pub(crate) fn log_density_unchecked(&self, sigma: f64) -> f64 {
        match *self {
            CorrPrior::Uniform => -std::f64::consts::LN_2,
            CorrPrior::LkjMarginal { nu, q } => {
                let a = nu + q as f64 / 2.0 - 1.0;
                symmetric_beta_log_density(sigma, a)
            }
            CorrPrior::IwMarginal { nu, q } => {
                symmetric_beta_log_density(sigma, Self::iw_exponent(nu, q) + 1.0)
            }
            CorrPrior::HwMarginal {
                nu,
                symmetric: true,
            } => symmetric_beta_log_density(sigma, nu / 2.0),
            CorrPrior::HwMarginal {
                nu,
                symmetric: false,
            } => {
                // ∫_{-1}^{1} (1-σ)^b dσ = 2^(b+1) / (b+1)
                let b = nu / 2.0 - 1.0;
                b * (1.0 - sigma).ln() + (b + 1.0).ln() - (b + 1.0) * std::f64::consts::LN_2
            }
            CorrPrior::FisherGaussian { omega } => {
                let g = sigma.atanh() / omega;
                -0.5 * g * g - LN_SQRT_2PI - omega.ln() - ((1.0 - sigma) * (1.0 + sigma)).ln()
            }
        }
    }
}

/// Log density of σ when (σ+1)/2 ~ Beta(a, a).
fn symmetric_beta_log_density(sigma: f64, a: f64) -> f64 {
    let u = 0.5 * (sigma + 1.0);
    (a - 1.0) * (u.ln() + (1.0 - u).ln()) - ln_beta(a, a) - std::f64::consts::LN_2
}

/// Fisher transform γ = atanh(σ).
pub fn fisher_transform(sigma: f64) -> Result<f64> {
    if !(sigma.abs() < 1.0) {
        return Err(Error::domain(format!("correlation {sigma} outside (-1,1)")));
    }
    // odd by construction
    Ok(sigma.signum() * sigma.abs().atanh())
}

/// Inverse Fisher transform σ = tanh(γ).
pub fn inverse_fisher(gamma: f64) -> Result<f64> {
    if !gamma.is_finite() {
        return Err(Error::domain("Fisher-scale value must be finite"));
    }
    Ok(gamma.tanh())
}
