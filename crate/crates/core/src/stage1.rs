//! First stage: independent probit fits per outcome.
//!
//! Each outcome is fitted as if the latent errors were independent. The
//! negative log posterior is minimized by damped Newton iterations and the
//! resulting mode and inverse Hessian define a Gaussian approximation
//! `N(β̂_j, H_j)` to the outcome's marginal posterior.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, spd_inverse, symmetrize};
use crate::numerics::{inverse_mills, log_std_normal_cdf};
use crate::priors::BetaPrior;

/// Gaussian approximation to one outcome's coefficient posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub beta_hat: DVector<f64>,
    /// Inverse Hessian of the negative log posterior at `beta_hat`.
    pub hessian_inv: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl BetaPosterior {
    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    /// The same point estimate with the uncertainty dropped (`H = 0`), as a
    /// frequentist plug-in second stage would use it.
    pub fn plug_in(&self) -> BetaPosterior {
        BetaPosterior {
            hessian_inv: DMatrix::zeros(self.dim(), self.dim()),
            ..self.clone()
        }
    }

    /// Equi-tailed `1 - alpha` intervals `β̂ ± z·sqrt(diag H)`.
    pub fn intervals(&self, alpha: f64) -> Result<Vec<(f64, f64)>> {
        let z = crate::numerics::std_normal_quantile(1.0 - alpha / 2.0)?;
        Ok((0..self.dim())
            .map(|l| {
                let half = z * self.hessian_inv[(l, l)].max(0.0).sqrt();
                (self.beta_hat[l] - half, self.beta_hat[l] + half)
            })
            .collect())
    }
}

/// Value, gradient and Hessian of the negative log posterior.
#[derive(Debug, Clone)]
pub struct ProbitObjective {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Stop once the gradient max-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            max_halvings: 30,
        }
    }
}

fn check_shapes(
    x: &DMatrix<f64>,
    y_col: &[u8],
    beta: &DVector<f64>,
    prior: &BetaPrior,
) -> Result<()> {
    if x.nrows() != y_col.len() {
        return Err(Error::shape(format!(
            "design has {} rows, outcome has {}",
            x.nrows(),
            y_col.len()
        )));
    }
    if x.ncols() != beta.len() || prior.dim() != beta.len() {
        return Err(Error::shape(format!(
            "design has {} columns, beta {} entries, prior dimension {}",
            x.ncols(),
            beta.len(),
            prior.dim()
        )));
    }
    Ok(())
}

/// Negative log-likelihood value only, for line searches.
fn objective_value(
    x: &DMatrix<f64>,
    y_col: &[u8],
    beta: &DVector<f64>,
    prior: &BetaPrior,
) -> Result<f64> {
    let eta = x * beta;
    let mut value = 0.0;
    for (i, (&e, &y)) in eta.iter().zip(y_col).enumerate() {
        if !e.is_finite() {
            return Err(Error::domain(format!(
                "non-finite linear predictor at row {i}"
            )));
        }
        let r = if y == 1 { 1.0 } else { -1.0 };
        value -= log_std_normal_cdf(r * e);
    }
    let d = beta - prior.mean();
    Ok(value + 0.5 * d.dot(&(prior.precision() * &d)))
}

/// Negative log posterior of a univariate probit regression under a
/// Gaussian prior, up to the prior's normalizing constant:
/// `-Σ_i log Φ(r_i x_iᵀβ) + ½(β-m)ᵀC⁻¹(β-m)` with `r_i = 2y_i - 1`.
pub fn probit_objective(
    x: &DMatrix<f64>,
    y_col: &[u8],
    beta: &DVector<f64>,
    prior: &BetaPrior,
) -> Result<ProbitObjective> {
    check_shapes(x, y_col, beta, prior)?;
    let p = beta.len();
    let eta = x * beta;
    let mut value = 0.0;
    // per-row score and curvature weights
    let mut score = DVector::zeros(x.nrows());
    let mut curv = DVector::zeros(x.nrows());
    for (i, (&e, &y)) in eta.iter().zip(y_col).enumerate() {
        if !e.is_finite() {
            return Err(Error::domain(format!(
                "non-finite linear predictor at row {i}"
            )));
        }
        let r = if y == 1 { 1.0 } else { -1.0 };
        let t = r * e;
        let lambda = inverse_mills(t);
        value -= log_std_normal_cdf(t);
        score[i] = -r * lambda;
        // λ(t)(λ(t) + t) lies in (0, 1); guard the far tail against rounding
        curv[i] = (lambda * (lambda + t)).clamp(0.0, 1.0);
    }
    let d = beta - prior.mean();
    let prec = prior.precision();
    value += 0.5 * d.dot(&(prec * &d));
    let gradient = x.tr_mul(&score) + prec * &d;
    let mut weighted = x.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= curv[i];
    }
    let hessian = symmetrize(&(x.tr_mul(&weighted) + prec));
    debug_assert_eq!(hessian.nrows(), p);
    Ok(ProbitObjective {
        value,
        gradient,
        hessian,
    })
}

/// Relative resolution of the objective value used by the line search.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Trace of a Newton run, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct NewtonTrace {
    pub posterior: BetaPosterior,
    pub objective_values: Vec<f64>,
}

/// MAP fit plus Laplace approximation for one outcome column.
pub fn fit_marginal_probit(
    x: &DMatrix<f64>,
    y_col: &[u8],
    prior: &BetaPrior,
    options: &NewtonOptions,
) -> Result<BetaPosterior> {
    fit_marginal_probit_traced(x, y_col, prior, options).map(|t| t.posterior)
}

pub fn fit_marginal_probit_traced(
    x: &DMatrix<f64>,
    y_col: &[u8],
    prior: &BetaPrior,
    options: &NewtonOptions,
) -> Result<NewtonTrace> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut obj = probit_objective(x, y_col, &beta, prior)?;
    let mut values = vec![obj.value];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        if obj.gradient.amax() < options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let chol = cholesky_jittered(&obj.hessian).map_err(|_| {
            Error::Convergence(format!(
                "Hessian not positive definite at iteration {iterations}"
            ))
        })?;
        let step = chol.solve(&obj.gradient);
        // near the mode the predicted decrease drops below the rounding error
        // of the objective; a full step is then judged within that slack
        let slack = ROUNDING_SLACK * (1.0 + obj.value.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta - &step * t;
            let bound = if t == 1.0 {
                obj.value + slack
            } else {
                obj.value
            };
            match objective_value(x, y_col, &candidate, prior) {
                Ok(v) if v <= bound && candidate != beta => {
                    accepted = Some(candidate);
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some(next) = accepted else {
            // no descent along the Newton direction: we are at the mode up to
            // floating-point resolution
            break;
        };
        beta = next;
        obj = probit_objective(x, y_col, &beta, prior)?;
        values.push(obj.value);
    }
    if !converged && obj.gradient.amax() < options.tolerance {
        converged = true;
    }

    let hessian_inv = spd_inverse(&obj.hessian)
        .or_else(|_| cholesky_jittered(&obj.hessian).map(|c| symmetrize(&c.inverse())))
        .map_err(|_| Error::Convergence("Hessian at the mode is not positive definite".into()))?;
    Ok(NewtonTrace {
        posterior: BetaPosterior {
            beta_hat: beta,
            hessian_inv,
            converged,
            iterations,
        },
        objective_values: values,
    })
}

/// Priors for the per-outcome fits: one shared prior or one per outcome.
#[derive(Debug, Clone, Copy)]
pub enum BetaPriors<'a> {
    Shared(&'a BetaPrior),
    PerOutcome(&'a [BetaPrior]),
}

impl<'a> BetaPriors<'a> {
    fn get(&self, j: usize) -> &'a BetaPrior {
        match *self {
            BetaPriors::Shared(p) => p,
            BetaPriors::PerOutcome(ps) => &ps[j],
        }
    }
}

/// Fits every outcome in parallel. Entry `j` depends only on column `j`.
pub fn fit_all_marginals(
    dataset: &Dataset,
    priors: BetaPriors<'_>,
    options: &NewtonOptions,
) -> Result<Vec<BetaPosterior>> {
    if let BetaPriors::PerOutcome(ps) = priors {
        if ps.len() != dataset.q() {
            return Err(Error::shape(format!(
                "{} priors supplied for {} outcomes",
                ps.len(),
                dataset.q()
            )));
        }
    }
    (0..dataset.q())
        .into_par_iter()
        .map(|j| {
            fit_marginal_probit(dataset.x(), dataset.y_column(j), priors.get(j), options)
                .map_err(|e| e.for_outcome(j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = task_rng(seed, &[]);
        let x = DMatrix::from_fn(n, p, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let beta: Vec<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = (0..n)
            .map(|i| {
                let eta: f64 = (0..p).map(|l| x[(i, l)] * beta[l]).sum();
                let z: f64 = eta + rng.sample::<f64, _>(StandardNormal);
                u8::from(z > 0.0)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn empty_data_gives_prior() {
        let prior = BetaPrior::new(
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let x = DMatrix::zeros(0, 2);
        let beta = DVector::from_vec(vec![1.0, 1.0]);
        let obj = probit_objective(&x, &[], &beta, &prior).unwrap();
        let d = &beta - prior.mean();
        assert!((obj.value - 0.5 * d.dot(&(prior.precision() * &d))).abs() < 1e-14);
        assert!((&obj.hessian - prior.precision()).amax() < 1e-14);

        let post = fit_marginal_probit(&x, &[], &prior, &NewtonOptions::default()).unwrap();
        assert!((&post.beta_hat - prior.mean()).amax() < 1e-12);
        assert!((&post.hessian_inv - prior.covariance()).amax() < 1e-12);
        assert!(post.converged);
    }

    #[test]
    fn symmetric_intercept_only_has_zero_gradient() {
        let prior = BetaPrior::isotropic(1, 0.0, 1e6).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let obj = probit_objective(&x, &[1, 0], &DVector::zeros(1), &prior).unwrap();
        assert!(obj.gradient.amax() < 1e-15);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let (x, y) = random_problem(20, 3, 11);
        let prior = BetaPrior::isotropic(3, 0.2, 4.0).unwrap();
        let beta = DVector::from_vec(vec![0.3, -0.8, 1.1]);
        let obj = probit_objective(&x, &y, &beta, &prior).unwrap();
        let h = 1e-5;
        for l in 0..3 {
            let mut up = beta.clone();
            up[l] += h;
            let mut dn = beta.clone();
            dn[l] -= h;
            let fu = probit_objective(&x, &y, &up, &prior).unwrap();
            let fd = probit_objective(&x, &y, &dn, &prior).unwrap();
            let g_fd = (fu.value - fd.value) / (2.0 * h);
            assert!((g_fd - obj.gradient[l]).abs() <= 1e-6 * obj.gradient[l].abs().max(1.0));
            for m in 0..3 {
                let h_fd = (fu.gradient[m] - fd.gradient[m]) / (2.0 * h);
                assert!(
                    (h_fd - obj.hessian[(l, m)]).abs() <= 1e-6 * obj.hessian[(l, m)].abs().max(1.0)
                );
            }
        }
    }

    #[test]
    fn objective_is_convex() {
        let (x, y) = random_problem(40, 3, 5);
        let prior = BetaPrior::isotropic(3, 0.0, 25.0).unwrap();
        let mut rng = task_rng(99, &[]);
        for _ in 0..200 {
            let b1 = DVector::from_fn(3, |_, _| 6.0 * (rng.random::<f64>() - 0.5));
            let b2 = DVector::from_fn(3, |_, _| 6.0 * (rng.random::<f64>() - 0.5));
            let t: f64 = rng.random();
            let mid = &b1 * t + &b2 * (1.0 - t);
            let f = |b: &DVector<f64>| probit_objective(&x, &y, b, &prior).unwrap().value;
            assert!(f(&mid) <= t * f(&b1) + (1.0 - t) * f(&b2) + 1e-9);
        }
    }

    #[test]
    fn newton_descends_and_converges() {
        for seed in 0..10 {
            let (x, y) = random_problem(60, 4, seed);
            let prior = BetaPrior::isotropic(4, 0.0, 25.0).unwrap();
            let trace =
                fit_marginal_probit_traced(&x, &y, &prior, &NewtonOptions::default()).unwrap();
            // nonincreasing up to the resolution of the objective
            assert!(trace
                .objective_values
                .windows(2)
                .all(|w| w[1] <= w[0] + ROUNDING_SLACK * (1.0 + w[0].abs())));
            let post = &trace.posterior;
            assert!(post.converged);
            let g = probit_objective(&x, &y, &post.beta_hat, &prior)
                .unwrap()
                .gradient;
            assert!(g.amax() < 1e-8);
            assert!(crate::linalg::asymmetry(&post.hessian_inv) < 1e-10);
            assert!(crate::linalg::is_positive_definite(&post.hessian_inv));
        }
    }

    #[test]
    fn separation_is_regularized() {
        let mut rng = task_rng(3, &[]);
        let x = DMatrix::from_fn(50, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = vec![0u8; 50];
        let prior = BetaPrior::isotropic(2, 0.0, 25.0).unwrap();
        let post = fit_marginal_probit(&x, &y, &prior, &NewtonOptions::default()).unwrap();
        assert!(post.beta_hat.iter().all(|b| b.is_finite()));
        assert!(post.beta_hat[0] < 0.0);
        assert!(post.converged);
    }

    #[test]
    fn parallel_fit_is_deterministic() {
        let (x, y1) = random_problem(80, 3, 21);
        let (_, y2) = random_problem(80, 3, 22);
        let d = Dataset::new(vec![y1.clone(), y2, y1], x).unwrap();
        let prior = BetaPrior::isotropic(3, 0.0, 25.0).unwrap();
        let opts = NewtonOptions::default();
        let a = crate::parallel::with_workers(Some(1), || {
            fit_all_marginals(&d, BetaPriors::Shared(&prior), &opts)
        })
        .unwrap()
        .unwrap();
        let b = crate::parallel::with_workers(Some(4), || {
            fit_all_marginals(&d, BetaPriors::Shared(&prior), &opts)
        })
        .unwrap()
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], a[2]);
        let single = fit_marginal_probit(d.x(), d.y_column(1), &prior, &opts).unwrap();
        assert_eq!(single, a[1]);
    }

    #[test]
    fn per_outcome_prior_count_checked() {
        let (x, y) = random_problem(10, 2, 1);
        let d = Dataset::new(vec![y.clone(), y], x).unwrap();
        let prior = BetaPrior::isotropic(2, 0.0, 1.0).unwrap();
        let priors = vec![prior];
        assert!(fit_all_marginals(
            &d,
            BetaPriors::PerOutcome(&priors),
            &NewtonOptions::default()
        )
        .is_err());
    }
}
