//! Serialized fit results.

use bigmvp::hierarchical::HyperState;
use bigmvp::{BetaPosterior, CorrPosterior, CorrPrior};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::BetaPriorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub intercept: bool,
    pub outcome_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub m: usize,
    pub alpha: f64,
    pub adjust_variance: bool,
    pub beta_prior: BetaPriorSpec,
    pub corr_prior: CorrPrior,
    pub hierarchical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_burnin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEntry {
    pub outcome: usize,
    pub beta_hat: Vec<f64>,
    pub hessian_inv: Vec<Vec<f64>>,
    pub intervals: Vec<[f64; 2]>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub j: usize,
    pub k: usize,
    pub sigma_hat: f64,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_variance: Option<f64>,
    pub interval: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperEntry {
    pub eta: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    pub omega2: f64,
}

/// Timing and pool size; everything outside this section is a function of
/// the inputs, configuration and seed only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub workers: usize,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_seconds: Option<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub metadata: Metadata,
    pub marginals: Vec<MarginalEntry>,
    pub pairs: Vec<PairEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected_sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<HyperEntry>,
    pub runtime: Runtime,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return None;
    }
    Some(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

impl MarginalEntry {
    pub fn new(outcome: usize, post: &BetaPosterior, intervals: Vec<(f64, f64)>) -> Self {
        MarginalEntry {
            outcome,
            beta_hat: post.beta_hat.iter().copied().collect(),
            hessian_inv: matrix_rows(&post.hessian_inv),
            intervals: intervals.into_iter().map(|(a, b)| [a, b]).collect(),
            converged: post.converged,
            iterations: post.iterations,
        }
    }

    pub fn posterior(&self) -> Option<BetaPosterior> {
        let h = rows_matrix(&self.hessian_inv)?;
        if h.shape() != (self.beta_hat.len(), self.beta_hat.len()) {
            return None;
        }
        Some(BetaPosterior {
            beta_hat: DVector::from_vec(self.beta_hat.clone()),
            hessian_inv: h,
            converged: self.converged,
            iterations: self.iterations,
        })
    }
}

impl PairEntry {
    pub fn new(j: usize, k: usize, post: &CorrPosterior, interval: (f64, f64)) -> Self {
        PairEntry {
            j,
            k,
            sigma_hat: post.sigma_hat,
            variance: post.variance,
            adjusted_variance: post.adjusted_variance,
            interval: [interval.0, interval.1],
        }
    }

    pub fn posterior(&self) -> CorrPosterior {
        CorrPosterior {
            sigma_hat: self.sigma_hat,
            variance: self.variance,
            adjusted_variance: self.adjusted_variance,
            log_norm_const: 0.0,
        }
    }
}

impl HyperEntry {
    pub fn new(h: &HyperState) -> Self {
        HyperEntry {
            eta: h.eta.iter().copied().collect(),
            omega: matrix_rows(&h.omega_mat),
            omega2: h.omega2,
        }
    }
}

impl FitReport {
    /// Pretty JSON without the runtime section, for reproducibility checks.
    pub fn numeric_json(&self) -> serde_json::Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("runtime");
        }
        serde_json::to_string_pretty(&value)
    }
}
