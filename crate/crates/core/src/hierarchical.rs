//! Empirical-Bayes extension: coefficients share a normal–inverse-Wishart
//! population distribution and Fisher-transformed correlations share a
//! zero-mean normal with unknown variance.
//!
//! The hyperparameters are estimated by an approximate conditional sampler
//! that alternates the two stages with conjugate hyperparameter draws; the
//! usual two-stage fit is then rerun with the averaged hyperparameters
//! plugged into the priors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, is_positive_definite, spd_inverse, symmetrize};
use crate::priors::{fisher_transform, BetaPrior, CorrPrior};
use crate::rng::task_rng;
use crate::stage1::{fit_all_marginals, BetaPosterior, BetaPriors, NewtonOptions};
use crate::stage2::{fit_all_pairs, pair_list, PairTable, Stage2Options};

/// Normal–inverse-Wishart hyperprior on the coefficient population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub eta0: DVector<f64>,
    pub nu0: f64,
    pub delta0: f64,
    pub lambda0: DMatrix<f64>,
}

impl NiwParams {
    /// `η₀ = 0, ν₀ = 1, δ₀ = p + 2, Λ₀ = I`.
    pub fn default_for(p: usize) -> Self {
        NiwParams {
            eta0: DVector::zeros(p),
            nu0: 1.0,
            delta0: p as f64 + 2.0,
            lambda0: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.eta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if self.lambda0.shape() != (p, p) {
            return Err(Error::shape("scale matrix does not match the mean"));
        }
        if !(self.nu0 > 0.0) {
            return Err(Error::domain(format!(
                "prior sample size {} must be positive",
                self.nu0
            )));
        }
        if !(self.delta0 > p as f64 - 1.0) {
            return Err(Error::domain(format!(
                "degrees of freedom {} must exceed p - 1 = {}",
                self.delta0,
                p as f64 - 1.0
            )));
        }
        if !is_positive_definite(&self.lambda0) {
            return Err(Error::domain("scale matrix is not positive definite"));
        }
        Ok(())
    }
}

/// Current or estimated hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub eta: DVector<f64>,
    pub omega_mat: DMatrix<f64>,
    pub omega2: f64,
    pub a_omega: f64,
    pub b_omega: f64,
}

/// Which scale-matrix update the coefficient hyperparameter step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleUpdate {
    /// Standard conjugate form, `Λ₀ + S + (ν₀q/ν_q)(β̄ - η₀)(β̄ - η₀)ᵀ`.
    #[default]
    Conjugate,
    /// `Λ₀ + S + (ν₀q/ν_q) Σ_j (β_j - η₀)(β_j - η₀)ᵀ`.
    PerCoefficient,
}

/// Draw from `IW(df, scale)` via the Bartlett decomposition of the
/// corresponding Wishart.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(df > p as f64 - 1.0) {
        return Err(Error::domain(format!(
            "inverse-Wishart degrees of freedom {df} ≤ p - 1"
        )));
    }
    let inv = spd_inverse(scale)
        .map_err(|_| Error::numerical("inverse-Wishart scale is not positive definite"))?;
    let l = cholesky_jittered(&inv)?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::domain(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    spd_inverse(&wishart).or_else(|_| Ok(symmetrize(&cholesky_jittered(&wishart)?.inverse())))
}

/// One draw of `(η, Ω)` from the normal–inverse-Wishart conditional given
/// the current coefficient vectors.
pub fn niw_update<R: Rng + ?Sized>(
    betas: &[DVector<f64>],
    prior: &NiwParams,
    form: ScaleUpdate,
    rng: &mut R,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    prior.validate()?;
    let p = prior.dim();
    let q = betas.len();
    if betas.iter().any(|b| b.len() != p) {
        return Err(Error::shape(
            "coefficient vectors do not match the hyperprior",
        ));
    }
    let (eta_q, nu_q, delta_q, lambda_q) = if q == 0 {
        (
            prior.eta0.clone(),
            prior.nu0,
            prior.delta0,
            prior.lambda0.clone(),
        )
    } else {
        let qf = q as f64;
        let mean = betas.iter().fold(DVector::zeros(p), |acc, b| acc + b) / qf;
        let mut scatter = DMatrix::zeros(p, p);
        for b in betas {
            let d = b - &mean;
            scatter += &d * d.transpose();
        }
        let nu_q = prior.nu0 + qf;
        let eta_q = (&prior.eta0 * prior.nu0 + &mean * qf) / nu_q;
        let shrink = prior.nu0 * qf / nu_q;
        let spread = match form {
            ScaleUpdate::Conjugate => {
                let d = &mean - &prior.eta0;
                &d * d.transpose()
            }
            ScaleUpdate::PerCoefficient => betas.iter().fold(DMatrix::zeros(p, p), |acc, b| {
                let d = b - &prior.eta0;
                acc + &d * d.transpose()
            }),
        };
        let lambda_q = symmetrize(&(&prior.lambda0 + scatter + spread * shrink));
        (eta_q, nu_q, prior.delta0 + qf, lambda_q)
    };
    if !is_positive_definite(&lambda_q) {
        return Err(Error::numerical(
            "updated scale matrix is not positive definite",
        ));
    }
    let omega = sample_inverse_wishart(delta_q, &lambda_q, rng)?;
    let chol = cholesky_jittered(&(&omega / nu_q))?;
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((&eta_q + chol.l() * z, omega))
}

/// One draw of `ω²` from `IG(len + a, ½Σγ² + b)`.
pub fn omega2_update<R: Rng + ?Sized>(
    gammas: &[f64],
    a_omega: f64,
    b_omega: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(a_omega > 0.0 && b_omega > 0.0) {
        return Err(Error::domain(format!(
            "inverse-gamma parameters ({a_omega}, {b_omega}) must be positive"
        )));
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::domain(
            "Fisher-transformed correlations must be finite",
        ));
    }
    let shape = gammas.len() as f64 + a_omega;
    let rate = 0.5 * gammas.iter().map(|g| g * g).sum::<f64>() + b_omega;
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?;
    Ok(1.0 / gamma.sample(rng))
}

/// Configuration of the hierarchical fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierConfig {
    pub niw: NiwParams,
    pub a_omega: f64,
    pub b_omega: f64,
    pub iters: usize,
    pub burnin: usize,
    pub scale_update: ScaleUpdate,
    pub newton: NewtonOptions,
    pub stage2: Stage2Options,
}

impl HierConfig {
    pub fn default_for(p: usize) -> Self {
        HierConfig {
            niw: NiwParams::default_for(p),
            a_omega: 1.0,
            b_omega: 1.0,
            iters: 200,
            burnin: 50,
            scale_update: ScaleUpdate::Conjugate,
            newton: NewtonOptions::default(),
            stage2: Stage2Options::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.niw.validate()?;
        self.stage2.validate()?;
        if self.iters <= self.burnin {
            return Err(Error::domain(format!(
                "iterations {} must exceed burn-in {}",
                self.iters, self.burnin
            )));
        }
        if !(self.a_omega > 0.0 && self.b_omega > 0.0) {
            return Err(Error::domain("inverse-gamma parameters must be positive"));
        }
        Ok(())
    }
}

/// Averaged hyperparameters plus the retained chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOutput {
    pub estimate: HyperState,
    pub eta_draws: Vec<DVector<f64>>,
    pub omega2_draws: Vec<f64>,
}

/// Largest |σ| passed to the Fisher transform.
pub const SIGMA_DRAW_LIMIT: f64 = 1.0 - 1e-9;

const STREAM_BETA: u64 = 1;
const STREAM_NIW: u64 = 2;
const STREAM_SIGMA: u64 = 3;
const STREAM_OMEGA: u64 = 4;

/// Approximate conditional sampler for `(η, Ω, ω²)`. Returns post-burn-in
/// averages; every random draw comes from a stream keyed by
/// `(iteration, step, task)`.
pub fn run_conditional_sampler(
    dataset: &Dataset,
    config: &HierConfig,
    seed: u64,
) -> Result<SamplerOutput> {
    config.validate()?;
    let p = dataset.p();
    let q = dataset.q();
    if config.niw.dim() != p {
        return Err(Error::shape("hyperprior dimension differs from the design"));
    }
    let pairs = pair_list(q);
    let mut eta = config.niw.eta0.clone();
    let mut omega_mat = if config.niw.delta0 > p as f64 + 1.0 {
        &config.niw.lambda0 / (config.niw.delta0 - p as f64 - 1.0)
    } else {
        config.niw.lambda0.clone()
    };
    let mut omega2: f64 = 1.0;

    let kept = config.iters - config.burnin;
    let mut eta_sum = DVector::zeros(p);
    let mut omega_sum = DMatrix::zeros(p, p);
    let mut eta_draws = Vec::with_capacity(kept);
    let mut omega2_draws = Vec::with_capacity(kept);

    for it in 0..config.iters {
        let step = |e: Error| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        };
        let t = it as u64;
        let beta_prior = BetaPrior::new(eta.clone(), omega_mat.clone()).map_err(step)?;
        let marginals = fit_all_marginals(dataset, BetaPriors::Shared(&beta_prior), &config.newton)
            .map_err(step)?;
        let betas: Vec<DVector<f64>> = marginals
            .par_iter()
            .enumerate()
            .map(|(j, post)| {
                let mut rng = task_rng(seed, &[t, STREAM_BETA, j as u64]);
                let chol = cholesky_jittered(&post.hessian_inv)?;
                let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok(&post.beta_hat + chol.l() * z)
            })
            .collect::<Result<_>>()
            .map_err(step)?;
        let (new_eta, new_omega) = niw_update(
            &betas,
            &config.niw,
            config.scale_update,
            &mut task_rng(seed, &[t, STREAM_NIW]),
        )
        .map_err(step)?;
        eta = new_eta;
        omega_mat = new_omega;

        let corr_prior = CorrPrior::fisher_gaussian(omega2.sqrt()).map_err(step)?;
        let table =
            fit_all_pairs(dataset, &marginals, &corr_prior, &config.stage2).map_err(step)?;
        let gammas: Vec<f64> = pairs
            .par_iter()
            .enumerate()
            .map(|(idx, &(j, k))| {
                let post = table.get(j, k).expect("pair present");
                let mut rng = task_rng(seed, &[t, STREAM_SIGMA, idx as u64]);
                let draw =
                    post.sigma_hat + post.variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let sigma = draw.clamp(-SIGMA_DRAW_LIMIT, SIGMA_DRAW_LIMIT);
                debug_assert!(sigma.abs() < 1.0);
                fisher_transform(sigma)
            })
            .collect::<Result<_>>()
            .map_err(step)?;
        omega2 = omega2_update(
            &gammas,
            config.a_omega,
            config.b_omega,
            &mut task_rng(seed, &[t, STREAM_OMEGA]),
        )
        .map_err(step)?;

        if it >= config.burnin {
            eta_sum += &eta;
            omega_sum += &omega_mat;
            eta_draws.push(eta.clone());
            omega2_draws.push(omega2);
        }
    }
    let kf = kept as f64;
    Ok(SamplerOutput {
        estimate: HyperState {
            eta: eta_sum / kf,
            omega_mat: symmetrize(&(omega_sum / kf)),
            omega2: omega2_draws.iter().sum::<f64>() / kf,
            a_omega: config.a_omega,
            b_omega: config.b_omega,
        },
        eta_draws,
        omega2_draws,
    })
}

/// Result of the hierarchical fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierFit {
    pub marginals: Vec<BetaPosterior>,
    pub pairs: PairTable,
    pub hyper: HyperState,
    pub sampler: SamplerOutput,
}

/// Two-stage fit with the priors `N(η, Ω)` on every coefficient vector and
/// the Fisher–Gaussian prior with variance `ω²` on every correlation.
pub fn fit_given_hyperparameters(
    dataset: &Dataset,
    hyper: &HyperState,
    newton: &NewtonOptions,
    stage2: &Stage2Options,
) -> Result<(Vec<BetaPosterior>, PairTable)> {
    let beta_prior = BetaPrior::new(hyper.eta.clone(), hyper.omega_mat.clone())?;
    let marginals = fit_all_marginals(dataset, BetaPriors::Shared(&beta_prior), newton)?;
    let corr_prior = CorrPrior::fisher_gaussian(hyper.omega2.sqrt())?;
    let pairs = fit_all_pairs(dataset, &marginals, &corr_prior, stage2)?;
    Ok((marginals, pairs))
}

/// Estimates the hyperparameters, then reruns both stages with them.
pub fn fit_hierarchical(dataset: &Dataset, config: &HierConfig, seed: u64) -> Result<HierFit> {
    let sampler = run_conditional_sampler(dataset, config, seed)?;
    let (marginals, pairs) =
        fit_given_hyperparameters(dataset, &sampler.estimate, &config.newton, &config.stage2)?;
    Ok(HierFit {
        marginals,
        pairs,
        hyper: sampler.estimate.clone(),
        sampler,
    })
}
