//! Synthetic multivariate probit data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::task_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefDesign {
    /// Every coefficient, intercepts included, drawn from `N(0, scale²)`.
    Dense,
    /// Slopes from `N(0, scale²)`, intercepts fixed at −3.
    Rare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorrDesign {
    /// `ΛΛᵀ + I` with a `q × factors` standard normal loading matrix.
    Factor {
        factors: usize,
    },
    /// Block diagonal with `LLᵀ` blocks from square standard normal `L`; the
    /// last block takes the remainder when `q` is not a multiple.
    Block {
        block_size: usize,
    },
    Equicorrelated {
        rho: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentDist {
    Normal,
    /// Multivariate t with one shared scale per row.
    StudentT {
        df: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Number of coefficients per outcome, intercept included when present.
    pub p: usize,
    pub q: usize,
    pub coef_design: CoefDesign,
    pub corr_design: CorrDesign,
    pub latent: LatentDist,
    pub intercept: bool,
    /// Standard deviation of the random coefficients.
    pub coef_scale: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, q: usize, seed: u64) -> Self {
        SimConfig {
            n,
            p,
            q,
            coef_design: CoefDesign::Dense,
            corr_design: CorrDesign::Factor { factors: 3 },
            latent: LatentDist::Normal,
            intercept: true,
            coef_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::domain("p and q must be positive"));
        }
        if !(self.coef_scale >= 0.0) || !self.coef_scale.is_finite() {
            return Err(Error::domain(format!(
                "coefficient scale {} invalid",
                self.coef_scale
            )));
        }
        match self.corr_design {
            CorrDesign::Factor { factors: 0 } => {
                return Err(Error::domain("factor design needs at least one factor"))
            }
            CorrDesign::Block { block_size: 0 } => {
                return Err(Error::domain("block size must be positive"))
            }
            CorrDesign::Equicorrelated { rho } => {
                let lower = if self.q > 1 {
                    -1.0 / (self.q as f64 - 1.0)
                } else {
                    -1.0
                };
                if !(rho > lower && rho < 1.0) {
                    return Err(Error::domain(format!(
                        "equicorrelation {rho} not positive definite for q = {}",
                        self.q
                    )));
                }
            }
            _ => {}
        }
        if let LatentDist::StudentT { df } = self.latent {
            if !(df > 2.0) {
                return Err(Error::domain(format!(
                    "t degrees of freedom {df} must exceed 2"
                )));
            }
        }
        Ok(())
    }
}

/// True parameters and data of one simulated replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub config: SimConfig,
    /// `p × q`, first row the intercepts when present.
    pub coefficients: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
    pub dataset: Dataset,
    /// Latent utilities, `n × q`.
    pub latent: DMatrix<f64>,
}

/// True coefficient matrix.
pub fn gen_coefficients<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(config.p, config.q, |l, _| {
        let draw = config.coef_scale * rng.sample::<f64, _>(StandardNormal);
        match (config.coef_design, config.intercept && l == 0) {
            (CoefDesign::Rare, true) => -3.0,
            _ => draw,
        }
    })
}

fn normalize(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = (0..gamma.nrows()).map(|i| gamma[(i, i)].sqrt()).collect();
    let mut s = DMatrix::from_fn(gamma.nrows(), gamma.ncols(), |i, j| {
        gamma[(i, j)] / (d[i] * d[j])
    });
    for i in 0..s.nrows() {
        s[(i, i)] = 1.0;
    }
    s
}

/// Correlation matrix `D⁻¹ΓD⁻¹` for the configured design.
pub fn gen_correlation<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    config.validate()?;
    let q = config.q;
    let gamma = match config.corr_design {
        CorrDesign::Factor { factors } => {
            let lambda = DMatrix::from_fn(q, factors, |_, _| rng.sample::<f64, _>(StandardNormal));
            factor_gamma(&lambda)
        }
        CorrDesign::Block { block_size } => {
            let mut g = DMatrix::zeros(q, q);
            let mut start = 0;
            while start < q {
                let size = block_size.min(q - start);
                let l = DMatrix::from_fn(size, size, |_, _| rng.sample::<f64, _>(StandardNormal));
                // a tiny ridge keeps the block definite if L happens to be singular
                let block = &l * l.transpose() + DMatrix::identity(size, size) * 1e-8;
                g.view_mut((start, start), (size, size)).copy_from(&block);
                start += size;
            }
            g
        }
        CorrDesign::Equicorrelated { rho } => {
            DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { rho })
        }
    };
    Ok(normalize(&gamma))
}

/// `ΛΛᵀ + I` for a given loading matrix.
pub fn factor_gamma(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    lambda * lambda.transpose() + DMatrix::identity(lambda.nrows(), lambda.nrows())
}

/// Draws covariates and outcomes for given true parameters.
pub fn gen_dataset<R: Rng + ?Sized>(
    coefficients: &DMatrix<f64>,
    correlation: &DMatrix<f64>,
    n: usize,
    latent: LatentDist,
    intercept: bool,
    rng: &mut R,
) -> Result<(Dataset, DMatrix<f64>)> {
    let (p, q) = coefficients.shape();
    if correlation.shape() != (q, q) {
        return Err(Error::shape(
            "correlation does not match the number of outcomes",
        ));
    }
    let chol = nalgebra::Cholesky::new(correlation.clone())
        .ok_or_else(|| Error::numerical("correlation matrix is not positive definite"))?;
    let l = chol.l();
    let chi = match latent {
        LatentDist::StudentT { df } if df > 2.0 => Some((
            df,
            ChiSquared::new(df).map_err(|e| Error::domain(e.to_string()))?,
        )),
        LatentDist::StudentT { df } => {
            return Err(Error::domain(format!(
                "t degrees of freedom {df} must exceed 2"
            )))
        }
        LatentDist::Normal => None,
    };
    let mut x = DMatrix::from_element(n, p, 1.0);
    let mut z = DMatrix::zeros(n, q);
    for i in 0..n {
        for c in 0..p {
            if !(intercept && c == 0) {
                x[(i, c)] = rng.sample(StandardNormal);
            }
        }
        let e = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut noise = &l * e;
        if let Some((df, dist)) = &chi {
            let w: f64 = dist.sample(rng);
            noise *= (df / w).sqrt();
        }
        let mean = coefficients.tr_mul(&x.row(i).transpose());
        z.set_row(i, &(mean + noise).transpose());
    }
    let y: Vec<Vec<u8>> = (0..q)
        .map(|j| (0..n).map(|i| u8::from(z[(i, j)] > 0.0)).collect())
        .collect();
    Ok((Dataset::new(y, x)?, z))
}

/// Full replicate: coefficients, correlation and data from one seed, each
/// from its own derived stream.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let coefficients = gen_coefficients(config, &mut task_rng(config.seed, &[1]));
    let correlation = gen_correlation(config, &mut task_rng(config.seed, &[2]))?;
    let (dataset, latent) = gen_dataset(
        &coefficients,
        &correlation,
        config.n,
        config.latent,
        config.intercept,
        &mut task_rng(config.seed, &[3]),
    )?;
    Ok(Simulation {
        config: config.clone(),
        coefficients,
        correlation,
        dataset,
        latent,
    })
}
