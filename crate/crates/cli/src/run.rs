//! The `fit`, `fit-hier`, `simulate` and `predict` pipelines.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use bigmvp::hierarchical::run_conditional_sampler;
use bigmvp::parallel::with_workers;
use bigmvp::predict::{pairwise_predictive, pairwise_predictive_mc, predict_classes};
use bigmvp::rng::task_rng;
use bigmvp::simulate::{simulate, SimConfig, Simulation};
use bigmvp::stage1::{fit_all_marginals, BetaPriors};
use bigmvp::stage2::run_stage2;
use bigmvp::{BetaPrior, CorrPrior};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BetaPriorSpec, RunConfig, Workers};
use crate::io::{format_f64, load_covariates, load_dataset, write_csv, write_json, LoadedData};
use crate::report::{
    matrix_rows, FitReport, HyperEntry, MarginalEntry, Metadata, PairEntry, Runtime,
};

/// Fits the model to data already in memory.
pub fn fit_loaded(data: &LoadedData, config: &RunConfig) -> Result<FitReport> {
    config.validate()?;
    let workers = config.workers;
    with_workers(workers.threads(), || {
        fit_in_pool(data, config, workers.effective())
    })?
}

fn fit_in_pool(data: &LoadedData, config: &RunConfig, workers: usize) -> Result<FitReport> {
    let d = &data.dataset;
    let total = Instant::now();
    let newton = config.newton_options();
    let stage2 = config.stage2_options();

    let (beta_prior, beta_spec, corr_prior, hyper, sampler_seconds) = if config.hierarchical {
        let t = Instant::now();
        let sampler = run_conditional_sampler(d, &config.hier_config(d.p()), config.seed)?;
        let h = sampler.estimate;
        let spec = BetaPriorSpec {
            mean: h.eta.iter().copied().collect(),
            covariance: matrix_rows(&h.omega_mat).concat(),
        };
        let beta_prior = BetaPrior::new(h.eta.clone(), h.omega_mat.clone())?;
        let corr_prior = CorrPrior::fisher_gaussian(h.omega2.sqrt())?;
        (
            beta_prior,
            spec,
            corr_prior,
            Some(HyperEntry::new(&h)),
            Some(t.elapsed().as_secs_f64()),
        )
    } else {
        let beta_prior = config.beta_prior.resolve(d.p())?;
        let corr_prior = config.corr_prior.resolve(d.q())?;
        (
            beta_prior,
            config.beta_prior.clone(),
            corr_prior,
            None,
            None,
        )
    };

    let t = Instant::now();
    let marginals = fit_all_marginals(d, BetaPriors::Shared(&beta_prior), &newton)?;
    let stage1_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let out = run_stage2(d, &marginals, &corr_prior, &stage2)?;
    let stage2_seconds = t.elapsed().as_secs_f64();

    let marginal_entries = marginals
        .iter()
        .enumerate()
        .map(|(j, post)| Ok(MarginalEntry::new(j, post, post.intervals(config.alpha)?)))
        .collect::<Result<Vec<_>>>()?;
    let pair_entries = out
        .pairs
        .iter()
        .map(|((j, k), post)| Ok(PairEntry::new(j, k, post, post.interval(config.alpha)?)))
        .collect::<Result<Vec<_>>>()?;

    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: if config.hierarchical {
            "fit-hier"
        } else {
            "fit"
        }
        .to_string(),
        seed: config.seed,
        n: d.n(),
        p: d.p(),
        q: d.q(),
        intercept: config.intercept,
        outcome_names: data.outcome_names.clone(),
        covariate_names: data.covariate_names.clone(),
        m: config.m,
        alpha: config.alpha,
        adjust_variance: config.adjust_variance,
        beta_prior: beta_spec,
        corr_prior,
        hierarchical: config.hierarchical,
        sampler_iters: config.hierarchical.then_some(config.iters),
        sampler_burnin: config.hierarchical.then_some(config.burnin),
    };
    Ok(FitReport {
        metadata,
        marginals: marginal_entries,
        pairs: pair_entries,
        projected_sigma: out.projected.as_ref().map(matrix_rows),
        hyperparameters: hyper,
        runtime: Runtime {
            workers,
            stage1_seconds,
            stage2_seconds,
            sampler_seconds,
            total_seconds: total.elapsed().as_secs_f64(),
        },
    })
}

/// Path of the flat correlation table written next to the JSON report.
pub fn sigma_csv_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
    output.with_file_name(format!("{stem}_sigma.csv"))
}

/// One line per pair `j < k`.
pub fn write_sigma_csv(path: &Path, report: &FitReport) -> Result<()> {
    let names = &report.metadata.outcome_names;
    let rows = report.pairs.iter().map(|e| {
        vec![
            e.j.to_string(),
            e.k.to_string(),
            names.get(e.j).cloned().unwrap_or_default(),
            names.get(e.k).cloned().unwrap_or_default(),
            format_f64(e.sigma_hat),
            format_f64(e.variance),
            e.adjusted_variance.map(format_f64).unwrap_or_default(),
            format_f64(e.interval[0]),
            format_f64(e.interval[1]),
        ]
    });
    write_csv(
        path,
        &[
            "j",
            "k",
            "outcome_j",
            "outcome_k",
            "sigma_hat",
            "variance",
            "adjusted_variance",
            "lower",
            "upper",
        ],
        rows,
    )
}

/// `fit` / `fit-hier`: load, fit, write the JSON report and the σ̂ table.
pub fn run_fit(config: &RunConfig) -> Result<FitReport> {
    config.validate()?;
    config.check_inputs()?;
    let y = config
        .y
        .as_deref()
        .ok_or_else(|| anyhow!("no outcome file given (y)"))?;
    let data = load_dataset(y, config.x.as_deref(), config.intercept)?;
    let report = fit_loaded(&data, config)?;
    write_json(&config.output, &report)?;
    write_sigma_csv(&sigma_csv_path(&config.output), &report)?;
    Ok(report)
}

/// True parameters written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SimConfig,
    /// `p × q`, one row per coefficient.
    pub coefficients: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
}

/// Files written by `simulate`.
#[derive(Debug, Clone)]
pub struct SimulationFiles {
    pub y: PathBuf,
    pub x: Option<PathBuf>,
    pub truth: PathBuf,
}

/// `simulate`: writes `y.csv`, `X.csv` and `truth.json` into `dir`. With
/// an intercept the constant column is left out of `X.csv`, matching the
/// loader's default of adding it back; an intercept-only design writes no
/// `X.csv`.
pub fn run_simulate(config: &SimConfig, dir: &Path) -> Result<(Simulation, SimulationFiles)> {
    let sim = simulate(config)?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let y_names: Vec<String> = (1..=config.q).map(|j| format!("y{j}")).collect();
    let y_path = dir.join("y.csv");
    crate::io::write_outcomes(&y_path, &sim.dataset, &y_names)?;
    let first = usize::from(config.intercept);
    let x_path = if sim.dataset.p() > first {
        let names: Vec<String> = (1..=sim.dataset.p() - first)
            .map(|l| format!("x{l}"))
            .collect();
        let path = dir.join("X.csv");
        crate::io::write_covariates(&path, sim.dataset.x(), first, &names)?;
        Some(path)
    } else {
        None
    };
    let truth = Truth {
        config: config.clone(),
        coefficients: matrix_rows(&sim.coefficients),
        correlation: matrix_rows(&sim.correlation),
    };
    let truth_path = dir.join("truth.json");
    write_json(&truth_path, &truth)?;
    Ok((
        sim,
        SimulationFiles {
            y: y_path,
            x: x_path,
            truth: truth_path,
        },
    ))
}

/// Settings for `predict`.
#[derive(Debug, Clone)]
pub struct PredictConfig {
    pub fit: PathBuf,
    /// Test covariates; may be omitted for an intercept-only model, which
    /// then predicts a single row.
    pub x: Option<PathBuf>,
    pub output: PathBuf,
    /// Use this many latent draws per table instead of the exact cells.
    pub draws: Option<usize>,
    pub seed: u64,
    pub workers: Workers,
}

/// One predicted 2×2 table.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub row: usize,
    pub j: usize,
    pub k: usize,
    pub cells: [f64; 4],
    pub classes: (u8, u8),
}

/// Predictive tables for every test row and every pair in the report.
pub fn predict_tables(
    report: &FitReport,
    x_test: &nalgebra::DMatrix<f64>,
    cfg: &PredictConfig,
) -> Result<Vec<PredictionRow>> {
    let posts = report
        .marginals
        .iter()
        .map(|m| {
            m.posterior()
                .ok_or_else(|| anyhow!("outcome {}: malformed posterior", m.outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let q = posts.len();
    if report.pairs.len() != q * q.saturating_sub(1) / 2 {
        bail!("report has {} pairs for {q} outcomes", report.pairs.len());
    }
    let p = report.metadata.p;
    if x_test.ncols() != p {
        bail!(
            "test covariates give {} columns, the model has {p}",
            x_test.ncols()
        );
    }
    let tasks: Vec<(usize, usize)> = (0..x_test.nrows())
        .flat_map(|i| (0..report.pairs.len()).map(move |e| (i, e)))
        .collect();
    let run = || {
        tasks
            .par_iter()
            .map(|&(i, e)| {
                let pair = &report.pairs[e];
                let xt = x_test.row(i).transpose();
                let corr = pair.posterior();
                let table = match cfg.draws {
                    None => pairwise_predictive(&posts[pair.j], &posts[pair.k], &corr, &xt)?,
                    Some(draws) => {
                        let mut rng = task_rng(cfg.seed, &[i as u64, e as u64]);
                        pairwise_predictive_mc(
                            &posts[pair.j],
                            &posts[pair.k],
                            &corr,
                            &xt,
                            draws,
                            &mut rng,
                        )?
                    }
                };
                Ok(PredictionRow {
                    row: i,
                    j: pair.j,
                    k: pair.k,
                    cells: table.cell_probs,
                    classes: predict_classes(&table),
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    with_workers(cfg.workers.threads(), run)?
}

/// `predict`: reads a fit report and test covariates, writes one CSV line
/// per test row and pair.
pub fn run_predict(cfg: &PredictConfig) -> Result<Vec<PredictionRow>> {
    let text = std::fs::read_to_string(&cfg.fit)
        .with_context(|| format!("cannot read {}", cfg.fit.display()))?;
    let report: FitReport = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a fit report", cfg.fit.display()))?;
    let x_test = match &cfg.x {
        Some(path) => load_covariates(path, report.metadata.intercept)?.0,
        None if report.metadata.intercept && report.metadata.p == 1 => {
            nalgebra::DMatrix::from_element(1, 1, 1.0)
        }
        None => bail!("test covariates are required for a model with covariates"),
    };
    let rows = predict_tables(&report, &x_test, cfg)?;
    let lines = rows.iter().map(|r| {
        let mut line = vec![r.row.to_string(), r.j.to_string(), r.k.to_string()];
        line.extend(r.cells.iter().map(|&c| format_f64(c)));
        line.push(r.classes.0.to_string());
        line.push(r.classes.1.to_string());
        line
    });
    write_csv(
        &cfg.output,
        &[
            "row", "j", "k", "p00", "p01", "p10", "p11", "class_j", "class_k",
        ],
        lines,
    )?;
    Ok(rows)
}
