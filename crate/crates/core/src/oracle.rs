//! Slow reference computations used to check the fast paths: an adaptive
//! integral for the bivariate normal CDF, dense-grid posteriors and a small
//! data-augmentation Gibbs sampler for the full model.

use libm::erfc;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::numerics::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use crate::priors::{BetaPrior, CorrPrior};
use crate::stage1::{fit_marginal_probit, BetaPosterior, NewtonOptions};
use crate::stage2::{pair_list, OutcomeSummary};

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the odd-indexed Kronrod nodes.
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * KRONROD_NODES[i]) + f(c + h * KRONROD_NODES[i]);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (value, err) = gauss_kronrod(f, a, b);
    if err <= tol || depth == 0 {
        return value;
    }
    let mid = 0.5 * (a + b);
    adaptive(f, a, mid, 0.5 * tol, depth - 1) + adaptive(f, mid, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]` to absolute `tol`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    adaptive(&f, a, b, tol, 50)
}

/// `Φ₂(h, k; ρ)` as the iterated integral `∫_{-∞}^h φ(x) Φ((k - ρx)/√(1-ρ²)) dx`,
/// with the outer integral done adaptively. Independent of the fast algorithm.
pub fn bivariate_cdf_reference(h: f64, k: f64, rho: f64, tol: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) || !h.is_finite() || !k.is_finite() {
        return Err(Error::domain(format!(
            "invalid arguments ({h}, {k}, {rho})"
        )));
    }
    let sd = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let f = |x: f64| {
        std_normal_pdf(x) * 0.5 * erfc(-(k - rho * x) / sd * std::f64::consts::FRAC_1_SQRT_2)
    };
    let lower = h.min(0.0) - 14.0;
    // split at the inner step, which is steep when |ρ| is near one
    let mut cuts = vec![lower, h];
    if rho != 0.0 {
        let step = k / rho;
        if step > lower && step < h {
            cuts.insert(1, step);
        }
    }
    let total: f64 = cuts
        .windows(2)
        .map(|w| integrate_adaptive(f, w[0], w[1], tol / 2.0))
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

/// Grid summary of a coefficient posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBetaSummary {
    pub mode: DVector<f64>,
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
}

fn log_phi_direct(t: f64) -> f64 {
    (0.5 * erfc(-t * std::f64::consts::FRAC_1_SQRT_2)).ln()
}

fn log_posterior_direct(
    x: &DMatrix<f64>,
    y_col: &[u8],
    prior: &BetaPrior,
    beta: &DVector<f64>,
) -> f64 {
    let mut total = prior.log_density(beta);
    for i in 0..x.nrows() {
        let eta = x.row(i).transpose().dot(beta);
        let r = if y_col[i] == 1 { 1.0 } else { -1.0 };
        total += log_phi_direct(r * eta);
    }
    total
}

fn grid_axis(centre: f64, half: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|t| centre - half + 2.0 * half * t as f64 / (points - 1) as f64)
        .collect()
}

fn tensor_points(centre: &DVector<f64>, half: &[f64], points: usize) -> Vec<DVector<f64>> {
    let axes: Vec<Vec<f64>> = (0..centre.len())
        .map(|l| grid_axis(centre[l], half[l], points))
        .collect();
    match axes.len() {
        1 => axes[0]
            .iter()
            .map(|&a| DVector::from_vec(vec![a]))
            .collect(),
        _ => axes[0]
            .iter()
            .flat_map(|&a| axes[1].iter().map(move |&b| DVector::from_vec(vec![a, b])))
            .collect(),
    }
}

/// Dense tensor-grid summary of a probit coefficient posterior for `p ≤ 2`.
///
/// The grid covers `β̂ ± grid_half_width·sd` around the Laplace fit. The mode
/// is then located by repeatedly zooming a grid around the best point.
pub fn grid_beta_posterior(
    x: &DMatrix<f64>,
    y_col: &[u8],
    prior: &BetaPrior,
    grid_half_width: f64,
    points_per_dim: usize,
) -> Result<GridBetaSummary> {
    let p = x.ncols();
    if p == 0 || p > 2 {
        return Err(Error::Unsupported(format!(
            "grid posterior needs 1 or 2 coefficients, got {p}"
        )));
    }
    if points_per_dim < 201 {
        return Err(Error::domain(format!(
            "{points_per_dim} grid points per dimension < 201"
        )));
    }
    if x.nrows() != y_col.len() || prior.dim() != p {
        return Err(Error::shape("design, outcome and prior disagree"));
    }
    let laplace = fit_marginal_probit(x, y_col, prior, &NewtonOptions::default())?;
    let half: Vec<f64> = (0..p)
        .map(|l| grid_half_width * laplace.hessian_inv[(l, l)].sqrt())
        .collect();
    let points = tensor_points(&laplace.beta_hat, &half, points_per_dim);
    let logs: Vec<f64> = points
        .par_iter()
        .map(|b| log_posterior_direct(x, y_col, prior, b))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(p);
    for (b, w) in points.iter().zip(&weights) {
        mean += b * (*w / total);
    }
    let mut var = DVector::zeros(p);
    for (b, w) in points.iter().zip(&weights) {
        let d = b - &mean;
        var += d.component_mul(&d) * (*w / total);
    }

    let best =
        logs.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc },
        );
    let mut mode = points[best.0].clone();
    let mut spacing: Vec<f64> = half
        .iter()
        .map(|h| 2.0 * h / (points_per_dim - 1) as f64)
        .collect();
    let zoom_points = 21;
    while spacing.iter().any(|&s| s > 1e-9) {
        // the maximizer lies within one spacing of the best grid point
        let window: Vec<f64> = spacing.iter().map(|s| 1.5 * s).collect();
        let cand = tensor_points(&mode, &window, zoom_points);
        let (i, _) = cand
            .iter()
            .map(|b| log_posterior_direct(x, y_col, prior, b))
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, l)| if l > acc.1 { (i, l) } else { acc },
            );
        mode = cand[i].clone();
        spacing = window
            .iter()
            .map(|w| 2.0 * w / (zoom_points - 1) as f64)
            .collect();
    }
    Ok(GridBetaSummary {
        mode,
        mean,
        sd: var.map(f64::sqrt),
    })
}

/// Posterior mean and variance of a pairwise correlation by the trapezoid
/// rule on a uniform grid over `(-1 + 1e-6, 1 - 1e-6)`.
pub fn grid_sigma_posterior(
    dataset: &Dataset,
    j: usize,
    k: usize,
    post_j: &BetaPosterior,
    post_k: &BetaPosterior,
    prior: &CorrPrior,
    grid_points: usize,
) -> Result<(f64, f64)> {
    if grid_points < 10_000 {
        return Err(Error::domain(format!("{grid_points} grid points < 10^4")));
    }
    dataset.check_outcome(j)?;
    dataset.check_outcome(k)?;
    prior.validate()?;
    let one = OutcomeSummary::new(dataset.x(), dataset.y_column(j), post_j)?;
    let two = OutcomeSummary::new(dataset.x(), dataset.y_column(k), post_k)?;
    let (lo, hi) = (-1.0 + 1e-6, 1.0 - 1e-6);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let logs: Vec<f64> = (0..grid_points)
        .into_par_iter()
        .map(|t| {
            let s = lo + step * t as f64;
            let end = if t == 0 || t == grid_points - 1 {
                0.5f64.ln()
            } else {
                0.0
            };
            crate::stage2::pair_loglik(s, &one, &two) + prior.log_density_unchecked(s) + end
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut m0, mut m1) = (0.0, 0.0);
    for (t, l) in logs.iter().enumerate() {
        let w = (l - top).exp();
        m0 += w;
        m1 += w * (lo + step * t as f64);
    }
    let mean = m1 / m0;
    let mut m2 = 0.0;
    for (t, l) in logs.iter().enumerate() {
        let d = lo + step * t as f64 - mean;
        m2 += (l - top).exp() * d * d;
    }
    Ok((mean, m2 / m0))
}

/// Draw from `N(0, 1)` truncated to `[a, ∞)` by inversion.
pub fn truncated_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
    if a <= 0.0 {
        let pa = std_normal_cdf(a);
        let v = (pa + u * (1.0 - pa)).min(1.0 - 1e-16);
        std_normal_quantile(v).unwrap_or(a).max(a)
    } else {
        // invert in the upper tail to keep precision
        let tail = std_normal_cdf(-a);
        if tail > 0.0 {
            let v = (u * tail).max(f64::MIN_POSITIVE);
            (-std_normal_quantile(v).unwrap_or(-a)).max(a)
        } else {
            // exponential approximation beyond the representable tail
            let e: f64 = -u.ln();
            a + e / a
        }
    }
}

/// Settings for [`da_gibbs_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOptions {
    pub iters: usize,
    pub burnin: usize,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    /// Initial random-walk step for correlations, adapted during burn-in.
    pub step: f64,
    /// Hold the correlation matrix fixed at this value.
    pub fix_sigma: Option<DMatrix<f64>>,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        GibbsOptions {
            iters: 20_000,
            burnin: 2_000,
            thin: 1,
            step: 0.1,
            fix_sigma: None,
        }
    }
}

/// Retained draws of the reference sampler.
#[derive(Debug, Clone)]
pub struct GibbsDraws {
    /// Coefficient matrices, `p × q`, one per retained draw.
    pub beta: Vec<DMatrix<f64>>,
    /// Correlations in row-major pair order, one vector per retained draw.
    pub sigma: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate of the correlation updates.
    pub acceptance: f64,
}

impl GibbsDraws {
    /// Mean and standard deviation of one pair's correlation draws.
    pub fn sigma_moments(&self, pair: usize) -> (f64, f64) {
        let n = self.sigma.len() as f64;
        let mean = self.sigma.iter().map(|s| s[pair]).sum::<f64>() / n;
        let var = self
            .sigma
            .iter()
            .map(|s| (s[pair] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (mean, var.sqrt())
    }
}

fn corr_log_target(
    sigma: &DMatrix<f64>,
    scatter: &DMatrix<f64>,
    n: usize,
    prior: &CorrPrior,
) -> Option<f64> {
    let chol = Cholesky::new(sigma.clone())?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = (chol.inverse() * scatter).trace();
    let mut lp = -0.5 * n as f64 * log_det - 0.5 * trace;
    let q = sigma.nrows();
    for (j, k) in pair_list(q) {
        lp += prior.log_density_unchecked(sigma[(j, k)]);
    }
    Some(lp)
}

/// Data-augmentation Gibbs sampler for the full multivariate probit model
/// with `q ≤ 3` outcomes.
///
/// Latent utilities are updated coordinatewise from truncated normals, the
/// coefficients jointly from their Gaussian full conditional and each
/// correlation by random-walk Metropolis, rejecting non-positive-definite
/// proposals. The correlation prior is the product of the pairwise
/// marginals, which is exact for two outcomes.
pub fn da_gibbs_reference<R: Rng + ?Sized>(
    dataset: &Dataset,
    beta_prior: &BetaPrior,
    corr_prior: &CorrPrior,
    options: &GibbsOptions,
    rng: &mut R,
) -> Result<GibbsDraws> {
    let q = dataset.q();
    if !(2..=3).contains(&q) {
        return Err(Error::Unsupported(format!(
            "reference sampler supports 2 or 3 outcomes, got {q}"
        )));
    }
    if options.iters <= options.burnin || options.thin == 0 {
        return Err(Error::domain("need iters > burnin and thin ≥ 1"));
    }
    corr_prior.validate()?;
    let (n, p) = (dataset.n(), dataset.p());
    if beta_prior.dim() != p {
        return Err(Error::shape(
            "coefficient prior dimension differs from the design",
        ));
    }
    let x = dataset.x();
    let xtx = x.tr_mul(x);
    let prior_prec = beta_prior.precision();
    let prior_shift = prior_prec * beta_prior.mean();
    let pairs = pair_list(q);

    let mut sigma = options
        .fix_sigma
        .clone()
        .unwrap_or_else(|| DMatrix::identity(q, q));
    if !crate::linalg::is_positive_definite(&sigma) {
        return Err(Error::domain(
            "fixed correlation matrix is not positive definite",
        ));
    }
    let mut beta = DMatrix::<f64>::zeros(p, q);
    let mut z = DMatrix::from_fn(n, q, |i, j| {
        if dataset.y_column(j)[i] == 1 {
            0.5
        } else {
            -0.5
        }
    });
    let mut step = vec![options.step; pairs.len()];
    let mut accepted = vec![0usize; pairs.len()];
    let mut window_accepted = vec![0usize; pairs.len()];
    let mut window = 0usize;

    let mut draws = GibbsDraws {
        beta: Vec::new(),
        sigma: Vec::new(),
        acceptance: 0.0,
    };

    for it in 0..options.iters {
        // latent utilities
        let mu = x * &beta;
        for j in 0..q {
            let others: Vec<usize> = (0..q).filter(|&l| l != j).collect();
            let s_oo = DMatrix::from_fn(others.len(), others.len(), |a, b| {
                sigma[(others[a], others[b])]
            });
            let s_jo = DVector::from_fn(others.len(), |a, _| sigma[(j, others[a])]);
            let w = cholesky_jittered(&s_oo)?.solve(&s_jo);
            let cond_sd = (1.0 - s_jo.dot(&w)).max(1e-12).sqrt();
            let yj = dataset.y_column(j);
            for i in 0..n {
                let mut m = mu[(i, j)];
                for (a, &l) in others.iter().enumerate() {
                    m += w[a] * (z[(i, l)] - mu[(i, l)]);
                }
                let bound = -m / cond_sd;
                z[(i, j)] = if yj[i] == 1 {
                    m + cond_sd * truncated_normal_above(bound, rng)
                } else {
                    m - cond_sd * truncated_normal_above(-bound, rng)
                };
            }
        }

        // coefficients, jointly over outcomes
        let sigma_inv = cholesky_jittered(&sigma)?.inverse();
        let dim = p * q;
        let mut prec = DMatrix::zeros(dim, dim);
        let mut lin = DVector::zeros(dim);
        let xtz = x.tr_mul(&z);
        for a in 0..q {
            for b in 0..q {
                let block = &xtx * sigma_inv[(a, b)];
                prec.view_mut((a * p, b * p), (p, p)).copy_from(&block);
            }
            let mut block = prec.view((a * p, a * p), (p, p)).clone_owned();
            block += prior_prec;
            prec.view_mut((a * p, a * p), (p, p)).copy_from(&block);
            let mut l = prior_shift.clone();
            for b in 0..q {
                l += xtz.column(b) * sigma_inv[(a, b)];
            }
            lin.rows_mut(a * p, p).copy_from(&l);
        }
        let chol = cholesky_jittered(&symmetrize(&prec))?;
        let mean = chol.solve(&lin);
        let e = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        // precision = L Lᵀ, so L⁻ᵀ e has covariance precision⁻¹
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&e)
            .ok_or_else(|| Error::numerical("singular coefficient precision"))?;
        let vec_beta = mean + noise;
        for a in 0..q {
            beta.set_column(a, &vec_beta.rows(a * p, p));
        }

        // correlations
        if options.fix_sigma.is_none() {
            let resid = &z - x * &beta;
            let scatter = resid.tr_mul(&resid);
            let mut current = corr_log_target(&sigma, &scatter, n, corr_prior)
                .ok_or_else(|| Error::numerical("lost PD state"))?;
            for (idx, &(j, k)) in pairs.iter().enumerate() {
                let proposal = sigma[(j, k)] + step[idx] * rng.sample::<f64, _>(StandardNormal);
                if proposal.abs() >= 1.0 {
                    continue;
                }
                let mut cand = sigma.clone();
                cand[(j, k)] = proposal;
                cand[(k, j)] = proposal;
                if let Some(lp) = corr_log_target(&cand, &scatter, n, corr_prior) {
                    if rng.random::<f64>().ln() < lp - current {
                        sigma = cand;
                        current = lp;
                        window_accepted[idx] += 1;
                        if it >= options.burnin {
                            accepted[idx] += 1;
                        }
                    }
                }
            }
            window += 1;
            if it < options.burnin && window == 50 {
                for idx in 0..pairs.len() {
                    let rate = window_accepted[idx] as f64 / window as f64;
                    step[idx] =
                        (step[idx] * if rate > 0.35 { 1.2 } else { 1.0 / 1.2 }).clamp(1e-4, 1.0);
                    window_accepted[idx] = 0;
                }
                window = 0;
            }
        }

        if it >= options.burnin && (it - options.burnin).is_multiple_of(options.thin) {
            draws.beta.push(beta.clone());
            draws
                .sigma
                .push(pairs.iter().map(|&(j, k)| sigma[(j, k)]).collect());
        }
    }
    let post = (options.iters - options.burnin) * pairs.len();
    draws.acceptance = if options.fix_sigma.is_some() {
        0.0
    } else {
        accepted.iter().sum::<usize>() as f64 / post as f64
    };
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;

    #[test]
    fn reference_cdf_closed_forms() {
        for &rho in &[-0.9, -0.3, 0.0, 0.5, 0.999] {
            let v = bivariate_cdf_reference(0.0, 0.0, rho, 1e-13).unwrap();
            let exact = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            assert!((v - exact).abs() < 1e-11, "{rho}: {v} vs {exact}");
        }
        let v = bivariate_cdf_reference(0.7, -0.4, 0.0, 1e-13).unwrap();
        assert!((v - std_normal_cdf(0.7) * std_normal_cdf(-0.4)).abs() < 1e-12);
        assert!(bivariate_cdf_reference(0.0, 0.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn adaptive_integral_examples() {
        let v = integrate_adaptive(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        let v = integrate_adaptive(|x| x.abs().sqrt(), -1.0, 1.0, 1e-10);
        assert!((v - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn grid_beta_no_data_is_prior() {
        let prior = BetaPrior::new(
            DVector::from_vec(vec![0.3]),
            DMatrix::from_element(1, 1, 0.25),
        )
        .unwrap();
        let x = DMatrix::zeros(0, 1);
        let g = grid_beta_posterior(&x, &[], &prior, 8.0, 401).unwrap();
        assert!((g.mean[0] - 0.3).abs() < 1e-8);
        assert!((g.sd[0] - 0.5).abs() < 1e-4);
        assert!((g.mode[0] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn grid_beta_symmetric_data() {
        let prior = BetaPrior::isotropic(1, 0.0, 4.0).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let g = grid_beta_posterior(&x, &[1, 0], &prior, 8.0, 201).unwrap();
        assert!(g.mean[0].abs() < 1e-10);
        assert!(grid_beta_posterior(
            &DMatrix::zeros(2, 3),
            &[1, 0],
            &BetaPrior::isotropic(3, 0.0, 1.0).unwrap(),
            6.0,
            201
        )
        .is_err());
    }

    #[test]
    fn grid_sigma_no_data() {
        let d = Dataset::new(vec![vec![], vec![]], DMatrix::zeros(0, 1)).unwrap();
        let post = BetaPosterior {
            beta_hat: DVector::zeros(1),
            hessian_inv: DMatrix::identity(1, 1),
            converged: true,
            iterations: 0,
        };
        let (m, v) =
            grid_sigma_posterior(&d, 0, 1, &post, &post, &CorrPrior::Uniform, 100_000).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
        // LKJ(1, 4): marginal Beta(2, 2) on (σ+1)/2, variance 4·ab/((a+b)²(a+b+1)) = 1/5
        let prior = CorrPrior::lkj(1.0, 4).unwrap();
        let (m, v) = grid_sigma_posterior(&d, 0, 1, &post, &post, &prior, 100_000).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - 0.2).abs() < 1e-6);
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = task_rng(1, &[]);
        for &a in &[-3.0, -0.5, 0.0, 1.0, 6.0, 40.0] {
            let draws: Vec<f64> = (0..2000)
                .map(|_| truncated_normal_above(a, &mut rng))
                .collect();
            assert!(draws.iter().all(|&d| d >= a && d.is_finite()));
        }
        // mean of N(0,1) truncated to [0, ∞) is √(2/π)
        let m: f64 = (0..200_000)
            .map(|_| truncated_normal_above(0.0, &mut rng))
            .sum::<f64>()
            / 200_000.0;
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
    }

    #[test]
    fn gibbs_is_reproducible_and_supports_small_q_only() {
        let mut rng = task_rng(2, &[]);
        let x = DMatrix::from_fn(40, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let cols: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                (0..40)
                    .map(|_| u8::from(rng.random::<f64>() < 0.5))
                    .collect()
            })
            .collect();
        let d = Dataset::new(cols, x.clone()).unwrap();
        let prior = BetaPrior::isotropic(2, 0.0, 25.0).unwrap();
        let opts = GibbsOptions {
            iters: 300,
            burnin: 100,
            ..GibbsOptions::default()
        };
        let a = da_gibbs_reference(
            &d,
            &prior,
            &CorrPrior::Uniform,
            &opts,
            &mut task_rng(5, &[]),
        )
        .unwrap();
        let b = da_gibbs_reference(
            &d,
            &prior,
            &CorrPrior::Uniform,
            &opts,
            &mut task_rng(5, &[]),
        )
        .unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.sigma.len(), 200);
        assert!(a.sigma.iter().all(|s| s[0].abs() < 1.0));

        let d4 = Dataset::new(vec![d.y_column(0).to_vec(); 4], x).unwrap();
        assert!(da_gibbs_reference(
            &d4,
            &prior,
            &CorrPrior::Uniform,
            &opts,
            &mut task_rng(5, &[])
        )
        .is_err());
    }
}
