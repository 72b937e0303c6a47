//! Second stage: posterior moments of each pairwise latent correlation.
//!
//! For a pair `(j, k)` the latent means are the first-stage linear predictors
//! and their variances are inflated by the first-stage uncertainty,
//! `v_ij = 1 + x_iᵀ H_j x_i`. The one-dimensional posterior of the correlation
//! is integrated by Gauss–Legendre quadrature in log space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, row_quadratic_forms, symmetrize};
use crate::numerics::{
    bivariate_normal_pdf, gauss_legendre_rule, inverse_mills, log_orthant, std_normal_cdf,
    std_normal_pdf, QuadratureRule, RHO_CLAMP,
};
use crate::priors::CorrPrior;
use crate::stage1::BetaPosterior;

/// Posterior summary for one correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrPosterior {
    pub sigma_hat: f64,
    pub variance: f64,
    /// Variance inflated by the estimated first-stage effect, when requested.
    pub adjusted_variance: Option<f64>,
    /// Log of the quadrature estimate of the normalizing constant.
    pub log_norm_const: f64,
}

impl CorrPosterior {
    /// Equi-tailed interval `σ̂ ± z·s`, using the adjusted variance if present.
    pub fn interval(&self, alpha: f64) -> Result<(f64, f64)> {
        let z = crate::numerics::std_normal_quantile(1.0 - alpha / 2.0)?;
        let half = z * self.adjusted_variance.unwrap_or(self.variance).sqrt();
        Ok((self.sigma_hat - half, self.sigma_hat + half))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Options {
    /// Quadrature nodes per pass.
    pub m: usize,
    /// Distance kept from ±1.
    pub eps: f64,
    pub adjust_variance: bool,
    /// Project the stacked estimate onto the nearest correlation matrix.
    pub project_pd: bool,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options {
            m: 25,
            eps: 1e-6,
            adjust_variance: false,
            project_pd: false,
        }
    }
}

impl Stage2Options {
    pub fn validate(&self) -> Result<()> {
        if self.m < 5 {
            return Err(Error::domain(format!("quadrature order {} < 5", self.m)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::domain(format!(
                "boundary offset {} outside (0, 0.5)",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Per-outcome quantities reused by every pair containing the outcome:
/// `a_i = r_i μ_i / √v_i` and `s_i = r_i / √v_i`.
#[derive(Debug, Clone)]
pub struct OutcomeSummary {
    a: Vec<f64>,
    s: Vec<f64>,
}

impl OutcomeSummary {
    pub fn new(x: &DMatrix<f64>, y_col: &[u8], post: &BetaPosterior) -> Result<Self> {
        if x.nrows() != y_col.len()
            || x.ncols() != post.dim()
            || post.hessian_inv.nrows() != post.dim()
        {
            return Err(Error::shape("posterior does not match the design"));
        }
        let mu = x * &post.beta_hat;
        let quad = row_quadratic_forms(x, &post.hessian_inv);
        let mut a = Vec::with_capacity(y_col.len());
        let mut s = Vec::with_capacity(y_col.len());
        for i in 0..y_col.len() {
            let v = 1.0 + quad[i].max(0.0);
            if !mu[i].is_finite() || !v.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite latent moments at row {i}"
                )));
            }
            let r = if y_col[i] == 1 { 1.0 } else { -1.0 };
            let sd = v.sqrt();
            a.push(r * mu[i] / sd);
            s.push(r / sd);
        }
        Ok(OutcomeSummary { a, s })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }
}

/// Pairwise log-likelihood from precomputed summaries.
pub fn pair_loglik(sigma: f64, one: &OutcomeSummary, two: &OutcomeSummary) -> f64 {
    let mut total = 0.0;
    for i in 0..one.a.len() {
        let rho = (sigma * (one.s[i] * two.s[i])).clamp(-RHO_CLAMP, RHO_CLAMP);
        total += log_orthant(one.a[i], two.a[i], rho);
    }
    total
}

fn check_pair(dataset: &Dataset, j: usize, k: usize) -> Result<()> {
    dataset.check_outcome(j)?;
    dataset.check_outcome(k)?;
    if j == k {
        return Err(Error::Index(format!(
            "pair needs two distinct outcomes, got ({j}, {k})"
        )));
    }
    Ok(())
}

/// `Σ_i ln Φ₂(a_ij, a_ik; σ s_ij s_ik)`: the bivariate probit log-likelihood
/// with the first-stage uncertainty integrated into the latent variances.
pub fn pairwise_loglik(
    sigma: f64,
    dataset: &Dataset,
    j: usize,
    k: usize,
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
) -> Result<f64> {
    check_pair(dataset, j, k)?;
    if !(sigma.abs() < 1.0) {
        return Err(Error::domain(format!("correlation {sigma} outside (-1,1)")));
    }
    let one = OutcomeSummary::new(dataset.x(), dataset.y_column(j), post_j)?;
    let two = OutcomeSummary::new(dataset.x(), dataset.y_column(k), post_k)?;
    Ok(pair_loglik(sigma, &one, &two))
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    log_mass: f64,
    mean: f64,
    variance: f64,
    peak: f64,
}

fn quadrature_moments(rule: &QuadratureRule, log_f: &impl Fn(f64) -> f64) -> Result<Moments> {
    let raw: Vec<f64> = rule.nodes.iter().map(|&x| log_f(x)).collect();
    let peak_node = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let logs: Vec<f64> = raw
        .iter()
        .zip(&rule.weights)
        .map(|(&l, &w)| l + w.ln())
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numerical(
            "posterior mass vanished on every quadrature node",
        ));
    }
    let mut mass = 0.0;
    let mut first = 0.0;
    for (&x, &l) in rule.nodes.iter().zip(&logs) {
        let w = (l - top).exp();
        mass += w;
        first += w * x;
    }
    let mean = first / mass;
    let mut second = 0.0;
    for (&x, &l) in rule.nodes.iter().zip(&logs) {
        let d = x - mean;
        second += (l - top).exp() * d * d;
    }
    Ok(Moments {
        log_mass: top + mass.ln(),
        mean,
        variance: second / mass,
        peak: peak_node,
    })
}

// A pass is trusted once the integration window spans at most this many
// posterior standard deviations.
const RESOLVED_WIDTH_SDS: f64 = 14.0;
// Zoomed windows start at mean ± this many sds ...
const WINDOW_SDS: f64 = 6.0;
// ... and grow until the log density at each end is this far below the peak.
const TAIL_DROP: f64 = 24.0;
const MAX_ZOOMS: usize = 8;

/// Posterior mean and variance of a density on `(lo, hi)` given by its log,
/// by `m`-point Gauss–Legendre quadrature. Sharp posteriors are re-integrated
/// on a window around their mass.
pub fn posterior_moments(
    log_f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    m: usize,
) -> Result<(f64, f64, f64)> {
    let base = gauss_legendre_rule(m, -1.0, 1.0)?;
    let (mut a, mut b) = (lo, hi);
    let mut mom = quadrature_moments(&base.rescaled(a, b)?, &log_f)?;
    let mut peak = mom.peak;
    for _ in 0..MAX_ZOOMS {
        let sd = mom.variance.max(0.0).sqrt();
        if sd * RESOLVED_WIDTH_SDS >= b - a {
            break;
        }
        let sd = sd.max(1e-10 * (hi - lo));
        let centre = mom.mean.clamp(lo, hi);
        let mut na = (centre - WINDOW_SDS * sd).max(lo);
        let mut nb = (centre + WINDOW_SDS * sd).min(hi);
        let mut step = sd;
        while na > lo && log_f(na) > peak - TAIL_DROP {
            na = (na - step).max(lo);
            step *= 2.0;
        }
        let mut step = sd;
        while nb < hi && log_f(nb) > peak - TAIL_DROP {
            nb = (nb + step).min(hi);
            step *= 2.0;
        }
        if !(nb > na) || nb - na >= 0.95 * (b - a) {
            break;
        }
        let next = quadrature_moments(&base.rescaled(na, nb)?, &log_f)?;
        a = na;
        b = nb;
        peak = peak.max(next.peak);
        mom = next;
    }
    Ok((mom.mean, mom.variance, mom.log_mass))
}

/// Smallest reported posterior variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Posterior moments of one correlation from precomputed summaries.
pub fn fit_pair_summaries(
    one: &OutcomeSummary,
    two: &OutcomeSummary,
    prior: &CorrPrior,
    options: &Stage2Options,
) -> Result<CorrPosterior> {
    options.validate()?;
    prior.validate()?;
    if one.n() != two.n() {
        return Err(Error::shape("outcome summaries have different lengths"));
    }
    let log_f = |sigma: f64| pair_loglik(sigma, one, two) + prior.log_density_unchecked(sigma);
    let (mean, variance, log_mass) =
        posterior_moments(log_f, -1.0 + options.eps, 1.0 - options.eps, options.m)?;
    if !(variance >= 0.0) || !mean.is_finite() {
        return Err(Error::numerical(format!(
            "invalid posterior moments ({mean}, {variance})"
        )));
    }
    Ok(CorrPosterior {
        sigma_hat: mean,
        variance: variance.max(VARIANCE_FLOOR),
        adjusted_variance: None,
        log_norm_const: log_mass,
    })
}

/// Posterior mean and variance of the latent correlation between outcomes
/// `j` and `k`.
pub fn fit_pair(
    dataset: &Dataset,
    j: usize,
    k: usize,
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    prior: &CorrPrior,
    options: &Stage2Options,
) -> Result<CorrPosterior> {
    check_pair(dataset, j, k)?;
    let one = OutcomeSummary::new(dataset.x(), dataset.y_column(j), post_j)?;
    let two = OutcomeSummary::new(dataset.x(), dataset.y_column(k), post_k)?;
    let mut out = fit_pair_summaries(&one, &two, prior, options)?;
    if options.adjust_variance {
        let comps = TauComponents::new(
            dataset.x(),
            &post_j.beta_hat,
            &post_k.beta_hat,
            out.sigma_hat,
        )?;
        out.adjusted_variance = Some(out.variance * comps.inflation()?);
    }
    Ok(out)
}

/// Upper triangle of pairwise results, stored row-major over `j < k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    q: usize,
    entries: Vec<CorrPosterior>,
}

/// Position of `(j, k)`, `j < k < q`, in row-major upper-triangle order.
pub fn pair_index(q: usize, j: usize, k: usize) -> usize {
    j * (2 * q - j - 1) / 2 + (k - j - 1)
}

/// All pairs `j < k` in row-major order.
pub fn pair_list(q: usize) -> Vec<(usize, usize)> {
    (0..q)
        .flat_map(|j| (j + 1..q).map(move |k| (j, k)))
        .collect()
}

impl PairTable {
    pub fn from_entries(q: usize, entries: Vec<CorrPosterior>) -> Result<Self> {
        if entries.len() != q * q.saturating_sub(1) / 2 {
            return Err(Error::shape(format!(
                "{} entries for {q} outcomes",
                entries.len()
            )));
        }
        Ok(PairTable { q, entries })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for `(j, k)` in either order.
    pub fn get(&self, j: usize, k: usize) -> Option<&CorrPosterior> {
        let (a, b) = if j < k { (j, k) } else { (k, j) };
        if a == b || b >= self.q {
            return None;
        }
        self.entries.get(pair_index(self.q, a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &CorrPosterior)> {
        pair_list(self.q).into_iter().zip(self.entries.iter())
    }

    pub fn entries(&self) -> &[CorrPosterior] {
        &self.entries
    }

    /// Stacked posterior means with a unit diagonal.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::identity(self.q, self.q);
        for ((j, k), e) in self.iter() {
            s[(j, k)] = e.sigma_hat;
            s[(k, j)] = e.sigma_hat;
        }
        s
    }
}

/// Result of the full second stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Output {
    pub pairs: PairTable,
    /// Nearest correlation matrix to the stacked estimate, when requested.
    pub projected: Option<DMatrix<f64>>,
}

/// Fits every pair `j < k` in parallel.
pub fn fit_all_pairs(
    dataset: &Dataset,
    posteriors: &[BetaPosterior],
    prior: &CorrPrior,
    options: &Stage2Options,
) -> Result<PairTable> {
    fit_all_pairs_with(dataset, posteriors, |_, _| *prior, options)
}

/// As [`fit_all_pairs`] with a prior chosen per pair.
pub fn fit_all_pairs_with(
    dataset: &Dataset,
    posteriors: &[BetaPosterior],
    prior_for: impl Fn(usize, usize) -> CorrPrior + Sync,
    options: &Stage2Options,
) -> Result<PairTable> {
    options.validate()?;
    let q = dataset.q();
    if posteriors.len() != q {
        return Err(Error::shape(format!(
            "{} posteriors for {q} outcomes",
            posteriors.len()
        )));
    }
    let summaries: Vec<OutcomeSummary> = (0..q)
        .into_par_iter()
        .map(|j| {
            OutcomeSummary::new(dataset.x(), dataset.y_column(j), &posteriors[j])
                .map_err(|e| e.for_outcome(j))
        })
        .collect::<Result<_>>()?;
    let entries = pair_list(q)
        .into_par_iter()
        .map(|(j, k)| {
            {
                let prior = prior_for(j, k);
                let mut out = fit_pair_summaries(&summaries[j], &summaries[k], &prior, options)?;
                if options.adjust_variance {
                    let comps = TauComponents::new(
                        dataset.x(),
                        &posteriors[j].beta_hat,
                        &posteriors[k].beta_hat,
                        out.sigma_hat,
                    )?;
                    out.adjusted_variance = Some(out.variance * comps.inflation()?);
                }
                Ok(out)
            }
            .map_err(|e: Error| e.for_pair(j, k))
        })
        .collect::<Result<Vec<_>>>()?;
    PairTable::from_entries(q, entries)
}

/// Runs the second stage and, if requested, the nearest-correlation projection.
pub fn run_stage2(
    dataset: &Dataset,
    posteriors: &[BetaPosterior],
    prior: &CorrPrior,
    options: &Stage2Options,
) -> Result<Stage2Output> {
    let pairs = fit_all_pairs(dataset, posteriors, prior, options)?;
    let projected = if options.project_pd {
        Some(nearest_correlation(&pairs.sigma_matrix(), 1e-10, 200)?)
    } else {
        None
    };
    Ok(Stage2Output { pairs, projected })
}

/// Finite-sample plug-in information quantities for the variance of a
/// correlation estimated with first-stage coefficients plugged in.
///
/// All are averages over rows at unit latent variances and means
/// `μ_i = (x_iᵀβ_j, x_iᵀβ_k)`, with expectations over the four outcome
/// cells taken exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TauComponents {
    /// Information for the correlation.
    pub r: f64,
    /// Cross information between the correlation and each coefficient vector.
    pub q_j: DVector<f64>,
    pub q_k: DVector<f64>,
    /// Univariate probit information matrices.
    pub r_j: DMatrix<f64>,
    pub r_k: DMatrix<f64>,
    /// Covariance between the two univariate scores.
    pub v: DMatrix<f64>,
}

const CELLS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

fn univariate_information(mu: f64) -> f64 {
    let p = std_normal_cdf(mu);
    let d = std_normal_pdf(mu);
    let w = p * (1.0 - p);
    if w > 0.0 {
        d * d / w
    } else {
        // tail limit of φ²/(Φ(1-Φ)) via the Mills ratio
        let l = inverse_mills(-mu.abs());
        l * d
    }
}

impl TauComponents {
    pub fn new(
        x: &DMatrix<f64>,
        beta_j: &DVector<f64>,
        beta_k: &DVector<f64>,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma.abs() < 1.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("correlation {sigma} outside (-1,1)")));
        }
        if x.ncols() != beta_j.len() || x.ncols() != beta_k.len() {
            return Err(Error::shape("coefficients do not match the design"));
        }
        let n = x.nrows();
        let p = x.ncols();
        if n == 0 {
            return Err(Error::numerical("no observations"));
        }
        let rho = sigma.clamp(-RHO_CLAMP, RHO_CLAMP);
        let cond_sd = ((1.0 - rho) * (1.0 + rho)).sqrt();
        let mu_j = x * beta_j;
        let mu_k = x * beta_k;
        let mut r = 0.0;
        let mut q_j = DVector::zeros(p);
        let mut q_k = DVector::zeros(p);
        let mut r_j = DMatrix::zeros(p, p);
        let mut r_k = DMatrix::zeros(p, p);
        let mut v = DMatrix::zeros(p, p);
        for i in 0..n {
            let (m1, m2) = (mu_j[i], mu_k[i]);
            if !m1.is_finite() || !m2.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite linear predictor at row {i}"
                )));
            }
            let dens = bivariate_normal_pdf(m1, m2, rho);
            let (mut ri, mut qj, mut qk, mut vi) = (0.0, 0.0, 0.0, 0.0);
            for &(s1, s2) in &CELLS {
                let prob = crate::numerics::bvn_lower(s1 * m1, s2 * m2, s1 * s2 * rho);
                vi += prob * s1 * s2 * inverse_mills(s1 * m1) * inverse_mills(s2 * m2);
                if prob <= 0.0 {
                    continue;
                }
                ri += dens * dens / prob;
                qj +=
                    s2 * std_normal_pdf(m1) * std_normal_cdf(s2 * (m2 - rho * m1) / cond_sd) * dens
                        / prob;
                qk +=
                    s1 * std_normal_pdf(m2) * std_normal_cdf(s1 * (m1 - rho * m2) / cond_sd) * dens
                        / prob;
            }
            let xi = x.row(i).transpose();
            let outer = &xi * xi.transpose();
            r += ri;
            q_j.axpy(qj, &xi, 1.0);
            q_k.axpy(qk, &xi, 1.0);
            r_j += &outer * univariate_information(m1);
            r_k += &outer * univariate_information(m2);
            v += &outer * vi;
        }
        let inv_n = 1.0 / n as f64;
        Ok(TauComponents {
            r: r * inv_n,
            q_j: q_j * inv_n,
            q_k: q_k * inv_n,
            r_j: symmetrize(&(r_j * inv_n)),
            r_k: symmetrize(&(r_k * inv_n)),
            v: v * inv_n,
        })
    }

    /// Asymptotic variance `τ` of `√n(σ̂ - σ)` for the plug-in estimator.
    pub fn tau(&self) -> Result<f64> {
        if !(self.r > 0.0) {
            return Err(Error::numerical(format!(
                "correlation information {} not positive",
                self.r
            )));
        }
        let inv_r = 1.0 / self.r;
        // a zero cross-information vector contributes nothing, even when the
        // matching information matrix is singular
        let solve = |info: &DMatrix<f64>, cross: &DVector<f64>| -> Result<DVector<f64>> {
            if cross.amax() == 0.0 {
                Ok(DVector::zeros(cross.len()))
            } else {
                Ok(cholesky_jittered(info)?.solve(cross))
            }
        };
        let aj = solve(&self.r_j, &self.q_j)?;
        let ak = solve(&self.r_k, &self.q_k)?;
        let extra = self.q_j.dot(&aj) + self.q_k.dot(&ak) + 2.0 * aj.dot(&(&self.v * &ak));
        Ok(inv_r + inv_r * inv_r * extra.max(0.0))
    }

    /// `τ / R⁻¹ ≥ 1`.
    pub fn inflation(&self) -> Result<f64> {
        Ok(self.tau()? * self.r)
    }
}

/// `τ̂_jk / n` at the given correlation estimate.
pub fn adjusted_variance_tau(
    dataset: &Dataset,
    j: usize,
    k: usize,
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    sigma_hat: f64,
) -> Result<f64> {
    check_pair(dataset, j, k)?;
    let comps = TauComponents::new(dataset.x(), &post_j.beta_hat, &post_k.beta_hat, sigma_hat)?;
    Ok(comps.tau()? / dataset.n() as f64)
}

/// Nearest correlation matrix in Frobenius norm by alternating projections
/// with Dykstra's correction.
pub fn nearest_correlation(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::shape("matrix must be square"));
    }
    let n = a.nrows();
    let mut y = symmetrize(a);
    let mut correction = DMatrix::zeros(n, n);
    for _ in 0..max_iter {
        let r = &y - &correction;
        let eig = SymmetricEigen::new(r.clone());
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let x = symmetrize(
            &(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()),
        );
        correction = &x - &r;
        let mut next = x.clone();
        for i in 0..n {
            next[(i, i)] = 1.0;
        }
        let change = (&next - &y).norm() / y.norm().max(1.0);
        y = next;
        if change < tol {
            break;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bivariate_normal_cdf;
    use crate::priors::BetaPrior;
    use crate::rng::task_rng;
    use crate::stage1::{fit_all_marginals, BetaPriors, NewtonOptions};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn correlated_pair(n: usize, rho: f64, seed: u64) -> Dataset {
        let mut rng = task_rng(seed, &[]);
        let x = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let mut y1 = Vec::with_capacity(n);
        let mut y2 = Vec::with_capacity(n);
        for i in 0..n {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 =
                rho * e1 + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            y1.push(u8::from(0.2 + 0.7 * x[(i, 1)] + e1 > 0.0));
            y2.push(u8::from(-0.3 + 0.5 * x[(i, 1)] + e2 > 0.0));
        }
        Dataset::new(vec![y1, y2], x).unwrap()
    }

    fn marginals(d: &Dataset) -> Vec<BetaPosterior> {
        let prior = BetaPrior::isotropic(d.p(), 0.0, 25.0).unwrap();
        fit_all_marginals(d, BetaPriors::Shared(&prior), &NewtonOptions::default()).unwrap()
    }

    #[test]
    fn no_data_uniform_prior_moments() {
        let d = Dataset::new(vec![vec![], vec![]], DMatrix::zeros(0, 1)).unwrap();
        let post = BetaPosterior {
            beta_hat: DVector::zeros(1),
            hessian_inv: DMatrix::identity(1, 1),
            converged: true,
            iterations: 0,
        };
        let out = fit_pair(
            &d,
            0,
            1,
            &post,
            &post,
            &CorrPrior::Uniform,
            &Stage2Options::default(),
        )
        .unwrap();
        assert!(out.sigma_hat.abs() < 1e-12);
        assert!((out.variance - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn independence_factorization() {
        let d = correlated_pair(60, 0.4, 1);
        let posts: Vec<BetaPosterior> = marginals(&d).iter().map(|p| p.plug_in()).collect();
        let ll = pairwise_loglik(0.0, &d, 0, 1, &posts[0], &posts[1]).unwrap();
        let flat = BetaPrior::isotropic(2, 0.0, 1e300).unwrap();
        let mut expect = 0.0;
        for j in 0..2 {
            expect +=
                crate::stage1::probit_objective(d.x(), d.y_column(j), &posts[j].beta_hat, &flat)
                    .unwrap()
                    .value;
        }
        assert!((ll + expect).abs() < 1e-9 * expect.abs());
        let swapped = pairwise_loglik(0.4, &d, 1, 0, &posts[1], &posts[0]).unwrap();
        assert_eq!(
            swapped,
            pairwise_loglik(0.4, &d, 0, 1, &posts[0], &posts[1]).unwrap()
        );
    }

    #[test]
    fn loglik_matches_direct_orthant_sum() {
        let d = correlated_pair(50, 0.4, 2);
        let posts = marginals(&d);
        let x = d.x();
        let mut direct = 0.0;
        for i in 0..d.n() {
            let xi = x.row(i).transpose();
            let m1 = xi.dot(&posts[0].beta_hat);
            let m2 = xi.dot(&posts[1].beta_hat);
            let v1 = 1.0 + xi.dot(&(&posts[0].hessian_inv * &xi));
            let v2 = 1.0 + xi.dot(&(&posts[1].hessian_inv * &xi));
            let r1 = 2.0 * d.y_column(0)[i] as f64 - 1.0;
            let r2 = 2.0 * d.y_column(1)[i] as f64 - 1.0;
            let p = crate::oracle::bivariate_cdf_reference(
                r1 * m1 / v1.sqrt(),
                r2 * m2 / v2.sqrt(),
                r1 * r2 * 0.4 / (v1 * v2).sqrt(),
                1e-13,
            )
            .unwrap();
            direct += p.ln();
        }
        let ll = pairwise_loglik(0.4, &d, 0, 1, &posts[0], &posts[1]).unwrap();
        assert!((ll - direct).abs() < 1e-8 * direct.abs());
    }

    #[test]
    fn identical_columns_are_strongly_correlated() {
        let d = correlated_pair(200, 0.0, 3);
        let y = d.y_column(0).to_vec();
        let d = Dataset::new(vec![y.clone(), y], d.x().clone()).unwrap();
        let posts = marginals(&d);
        let out = fit_pair(
            &d,
            0,
            1,
            &posts[0],
            &posts[1],
            &CorrPrior::Uniform,
            &Stage2Options::default(),
        )
        .unwrap();
        assert!(out.sigma_hat > 0.5);
        let grid = crate::oracle::grid_sigma_posterior(
            &d,
            0,
            1,
            &posts[0],
            &posts[1],
            &CorrPrior::Uniform,
            100_000,
        )
        .unwrap();
        assert!((grid.0 - out.sigma_hat).abs() < 1e-6);
    }

    #[test]
    fn matches_fine_grid_and_is_order_stable() {
        let d = correlated_pair(200, 0.5, 4);
        let posts = marginals(&d);
        let prior = CorrPrior::lkj(2.0, 2).unwrap();
        let out = fit_pair(
            &d,
            0,
            1,
            &posts[0],
            &posts[1],
            &prior,
            &Stage2Options::default(),
        )
        .unwrap();
        let (mean, var) =
            crate::oracle::grid_sigma_posterior(&d, 0, 1, &posts[0], &posts[1], &prior, 100_000)
                .unwrap();
        assert!(
            (out.sigma_hat - mean).abs() < 1e-6,
            "{} vs {mean}",
            out.sigma_hat
        );
        assert!((out.variance - var).abs() < 1e-6);
        let fine = Stage2Options {
            m: 100,
            ..Stage2Options::default()
        };
        let out100 = fit_pair(&d, 0, 1, &posts[0], &posts[1], &prior, &fine).unwrap();
        assert!((out.sigma_hat - out100.sigma_hat).abs() < 1e-6);
    }

    #[test]
    fn sharp_posterior_is_resolved() {
        let d = correlated_pair(1500, 0.7, 5);
        let posts = marginals(&d);
        let out = fit_pair(
            &d,
            0,
            1,
            &posts[0],
            &posts[1],
            &CorrPrior::Uniform,
            &Stage2Options::default(),
        )
        .unwrap();
        assert!(out.variance.sqrt() < 0.05);
        let (mean, var) = crate::oracle::grid_sigma_posterior(
            &d,
            0,
            1,
            &posts[0],
            &posts[1],
            &CorrPrior::Uniform,
            20_000,
        )
        .unwrap();
        assert!((out.sigma_hat - mean).abs() < 1e-6);
        assert!((out.variance - var).abs() < 1e-7);
    }

    #[test]
    fn sign_flip_negates_estimate() {
        let d = correlated_pair(300, 0.5, 6);
        let flipped = d.flip_outcome(1).unwrap();
        let a = marginals(&d);
        let b = marginals(&flipped);
        let opts = Stage2Options::default();
        let s = fit_pair(&d, 0, 1, &a[0], &a[1], &CorrPrior::Uniform, &opts).unwrap();
        let t = fit_pair(&flipped, 0, 1, &b[0], &b[1], &CorrPrior::Uniform, &opts).unwrap();
        assert!((s.sigma_hat + t.sigma_hat).abs() < 2e-3);
    }

    #[test]
    fn permutation_equivariance_and_worker_invariance() {
        let mut rng = task_rng(7, &[]);
        let n = 80;
        let x = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let cols: Vec<Vec<u8>> = (0..4)
            .map(|_| {
                (0..n)
                    .map(|_| u8::from(rng.random::<f64>() < 0.4))
                    .collect()
            })
            .collect();
        let d = Dataset::new(cols, x).unwrap();
        let posts = marginals(&d);
        let opts = Stage2Options::default();
        let base = crate::parallel::with_workers(Some(1), || {
            fit_all_pairs(&d, &posts, &CorrPrior::Uniform, &opts)
        })
        .unwrap()
        .unwrap();
        let wide = crate::parallel::with_workers(Some(8), || {
            fit_all_pairs(&d, &posts, &CorrPrior::Uniform, &opts)
        })
        .unwrap()
        .unwrap();
        assert_eq!(base, wide);
        let order = [2usize, 0, 3, 1];
        let pd = d.permute_outcomes(&order).unwrap();
        let pposts: Vec<_> = order.iter().map(|&o| posts[o].clone()).collect();
        let permuted = fit_all_pairs(&pd, &pposts, &CorrPrior::Uniform, &opts).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                let orig = base.get(order[a], order[b]).unwrap();
                assert_eq!(permuted.get(a, b).unwrap(), orig);
            }
        }
        let single = fit_pair(&d, 1, 3, &posts[1], &posts[3], &CorrPrior::Uniform, &opts).unwrap();
        assert_eq!(base.get(1, 3).unwrap(), &single);
        assert_eq!(base.get(3, 1).unwrap(), &single);
    }

    #[test]
    fn pair_index_is_row_major() {
        let q = 6;
        for (idx, (j, k)) in pair_list(q).into_iter().enumerate() {
            assert_eq!(pair_index(q, j, k), idx);
        }
    }

    #[test]
    fn tau_reduces_without_covariate_information() {
        let x = DMatrix::zeros(30, 1);
        let b = DVector::zeros(1);
        let c = TauComponents::new(&x, &b, &b, 0.3).unwrap();
        assert_eq!(c.q_j.amax(), 0.0);
        assert_eq!(c.q_k.amax(), 0.0);
        assert_eq!(c.tau().unwrap(), 1.0 / c.r);
        let x = DMatrix::from_element(30, 1, 1.0);
        let c = TauComponents::new(&x, &b, &b, 0.0).unwrap();
        // at σ = 0 and zero means the cross information is zero by symmetry
        assert!(c.q_j.amax() < 1e-15);
        assert!((c.tau().unwrap() - 1.0 / c.r).abs() < 1e-15);
    }

    fn log_cell(m1: f64, m2: f64, rho: f64, s1: f64, s2: f64) -> f64 {
        bivariate_normal_cdf(s1 * m1, s2 * m2, s1 * s2 * rho)
            .unwrap()
            .ln()
    }

    fn log_marg(m: f64, s: f64) -> f64 {
        std_normal_cdf(s * m).ln()
    }

    #[test]
    fn tau_components_match_score_oracle() {
        // scores by central differences, expectations by summing the four cells
        let mut rng = task_rng(8, &[]);
        let n = 6;
        let x = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let bj = DVector::from_vec(vec![0.3, -0.6]);
        let bk = DVector::from_vec(vec![-0.2, 0.8]);
        let rho = 0.35;
        let c = TauComponents::new(&x, &bj, &bk, rho).unwrap();
        let h = 1e-5;
        let mut r = 0.0;
        let mut qj = DVector::zeros(2);
        let mut qk = DVector::zeros(2);
        let mut rj = DMatrix::zeros(2, 2);
        let mut v = DMatrix::zeros(2, 2);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let (m1, m2) = (xi.dot(&bj), xi.dot(&bk));
            for &(s1, s2) in &CELLS {
                let p = bivariate_normal_cdf(s1 * m1, s2 * m2, s1 * s2 * rho).unwrap();
                let srho = (log_cell(m1, m2, rho + h, s1, s2) - log_cell(m1, m2, rho - h, s1, s2))
                    / (2.0 * h);
                let s_bj = (log_cell(m1 + h, m2, rho, s1, s2) - log_cell(m1 - h, m2, rho, s1, s2))
                    / (2.0 * h);
                let s_bk = (log_cell(m1, m2 + h, rho, s1, s2) - log_cell(m1, m2 - h, rho, s1, s2))
                    / (2.0 * h);
                let u_j = (log_marg(m1 + h, s1) - log_marg(m1 - h, s1)) / (2.0 * h);
                let u_k = (log_marg(m2 + h, s2) - log_marg(m2 - h, s2)) / (2.0 * h);
                r += p * srho * srho;
                qj += &xi * (p * srho * s_bj);
                qk += &xi * (p * srho * s_bk);
                rj += &xi * xi.transpose() * (p * u_j * u_j);
                v += &xi * xi.transpose() * (p * u_j * u_k);
            }
        }
        let nf = n as f64;
        assert!((r / nf - c.r).abs() < 1e-4);
        assert!((qj / nf - &c.q_j).amax() < 1e-4);
        assert!((qk / nf - &c.q_k).amax() < 1e-4);
        assert!((rj / nf - &c.r_j).amax() < 1e-4);
        assert!((v / nf - &c.v).amax() < 1e-4);
        assert!(c.inflation().unwrap() >= 1.0);
    }

    #[test]
    fn adjusted_variance_is_not_smaller() {
        let d = correlated_pair(200, 0.3, 9);
        let posts = marginals(&d);
        let opts = Stage2Options {
            adjust_variance: true,
            ..Stage2Options::default()
        };
        let out = fit_pair(&d, 0, 1, &posts[0], &posts[1], &CorrPrior::Uniform, &opts).unwrap();
        let adj = out.adjusted_variance.unwrap();
        assert!(adj >= out.variance - 1e-12);
        let tau_n = adjusted_variance_tau(&d, 0, 1, &posts[0], &posts[1], out.sigma_hat).unwrap();
        assert!(tau_n > 0.0);
    }

    #[test]
    fn nearest_correlation_repairs_indefinite_input() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let c = nearest_correlation(&a, 1e-12, 1000).unwrap();
        for i in 0..3 {
            assert!((c[(i, i)] - 1.0).abs() < 1e-12);
        }
        let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
        assert!(min_eig > -1e-8);
        let id = nearest_correlation(&DMatrix::identity(3, 3), 1e-12, 10).unwrap();
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-14);
    }
}
