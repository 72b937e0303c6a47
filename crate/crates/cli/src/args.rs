//! Command-line parsing and dispatch.

use std::path::PathBuf;

use anyhow::{bail, Result};
use bigmvp::simulate::{CoefDesign, CorrDesign, LatentDist, SimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{RunConfig, Settings, Workers, WORKERS_ENV};
use crate::run::{run_fit, run_predict, run_simulate, sigma_csv_path, PredictConfig};
use crate::verify::{parse_selection, run_criterion, VerifyOptions};

#[derive(Debug, Parser)]
#[command(
    name = "bigmvp",
    version,
    about = "Two-stage approximate Bayesian multivariate probit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit marginal probit posteriors and pairwise correlation posteriors.
    Fit(FitArgs),
    /// As `fit`, with hyperparameters estimated by the conditional sampler.
    FitHier(FitArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Pairwise predictive tables from a fit report.
    Predict(PredictArgs),
    /// Run the acceptance criteria.
    Verify(VerifyArgs),
}

/// Flags mirror the configuration keys; any flag given overrides the file.
#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Binary outcome matrix, n × q.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Covariates, n × (p - 1) with an intercept or n × p without.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Prepend a constant column to the covariates [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub intercept: Option<String>,
    /// Report path; the σ̂ table goes next to it as `<stem>_sigma.csv`.
    #[arg(long, short)]
    pub output: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Thread count or `auto`.
    #[arg(long)]
    pub workers: Option<String>,
    /// Credible intervals have level 1 - alpha.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Gauss–Legendre nodes per quadrature pass.
    #[arg(long)]
    pub m: Option<String>,
    /// Also report the first-stage-adjusted correlation variance.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adjust_variance: Option<String>,
    /// Also report the nearest correlation matrix to the σ̂ table.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub project_pd: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub hierarchical: Option<String>,
    /// Conditional sampler iterations.
    #[arg(long)]
    pub iters: Option<String>,
    #[arg(long)]
    pub burnin: Option<String>,
    #[arg(long)]
    pub a_omega: Option<String>,
    #[arg(long)]
    pub b_omega: Option<String>,
    /// `conjugate` or `per-coefficient`.
    #[arg(long)]
    pub scale_update: Option<String>,
    /// Newton gradient tolerance.
    #[arg(long)]
    pub tolerance: Option<String>,
    #[arg(long)]
    pub max_iterations: Option<String>,
    /// Coefficient prior mean: one value or p comma-separated values.
    #[arg(long)]
    pub beta_mean: Option<String>,
    /// Coefficient prior covariance: one value, p values or p² values.
    #[arg(long)]
    pub beta_covariance: Option<String>,
    /// Correlation prior: uniform, lkj, iw, hw or fisher.
    #[arg(long)]
    pub corr_kind: Option<String>,
    #[arg(long)]
    pub corr_nu: Option<String>,
    /// Dimension used by the lkj and iw marginals [default: number of outcomes].
    #[arg(long)]
    pub corr_q: Option<String>,
    #[arg(long)]
    pub corr_omega: Option<String>,
    /// Use the symmetric Huang–Wand marginal.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub corr_symmetric: Option<String>,
}

impl FitArgs {
    fn flag_settings(&self) -> Settings {
        let mut s = Settings::default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let pairs: [(&str, Option<String>); 25] = [
            ("y", path(&self.y)),
            ("x", path(&self.x)),
            ("intercept", self.intercept.clone()),
            ("output", self.output.clone()),
            ("seed", self.seed.clone()),
            ("workers", self.workers.clone()),
            ("alpha", self.alpha.clone()),
            ("m", self.m.clone()),
            ("adjust_variance", self.adjust_variance.clone()),
            ("project_pd", self.project_pd.clone()),
            ("hierarchical", self.hierarchical.clone()),
            ("iters", self.iters.clone()),
            ("burnin", self.burnin.clone()),
            ("a_omega", self.a_omega.clone()),
            ("b_omega", self.b_omega.clone()),
            ("scale_update", self.scale_update.clone()),
            ("tolerance", self.tolerance.clone()),
            ("max_iterations", self.max_iterations.clone()),
            ("beta_mean", self.beta_mean.clone()),
            ("beta_covariance", self.beta_covariance.clone()),
            ("corr_kind", self.corr_kind.clone()),
            ("corr_nu", self.corr_nu.clone()),
            ("corr_q", self.corr_q.clone()),
            ("corr_omega", self.corr_omega.clone()),
            ("corr_symmetric", self.corr_symmetric.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, v);
            }
        }
        s
    }

    /// File settings, then flags, then `BIGMVP_WORKERS` for the worker count.
    pub fn resolve(&self, hierarchical: bool) -> Result<RunConfig> {
        let mut settings = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        settings.overlay(&self.flag_settings());
        if hierarchical {
            settings.set("hierarchical", "true");
        }
        let env = std::env::var(WORKERS_ENV).ok();
        RunConfig::from_settings(&settings, env.as_deref())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CoefChoice {
    Dense,
    Rare,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorrChoice {
    Factor,
    Block,
    Equicorrelated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LatentChoice {
    Normal,
    T,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    /// Coefficients per outcome, intercept included.
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, value_enum, default_value = "dense")]
    pub coef: CoefChoice,
    #[arg(long, value_enum, default_value = "factor")]
    pub corr: CorrChoice,
    #[arg(long, default_value_t = 3)]
    pub factors: usize,
    #[arg(long, default_value_t = 5)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "normal")]
    pub latent: LatentChoice,
    /// Degrees of freedom of the multivariate t latent.
    #[arg(long, default_value_t = 10.0)]
    pub df: f64,
    /// Make every covariate random (no constant column).
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = 1.0)]
    pub coef_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for y.csv, X.csv and truth.json.
    #[arg(long, short, default_value = ".")]
    pub out_dir: PathBuf,
}

impl SimulateArgs {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            coef_design: match self.coef {
                CoefChoice::Dense => CoefDesign::Dense,
                CoefChoice::Rare => CoefDesign::Rare,
            },
            corr_design: match self.corr {
                CorrChoice::Factor => CorrDesign::Factor {
                    factors: self.factors,
                },
                CorrChoice::Block => CorrDesign::Block {
                    block_size: self.block_size,
                },
                CorrChoice::Equicorrelated => CorrDesign::Equicorrelated { rho: self.rho },
            },
            latent: match self.latent {
                LatentChoice::Normal => LatentDist::Normal,
                LatentChoice::T => LatentDist::StudentT { df: self.df },
            },
            intercept: !self.no_intercept,
            coef_scale: self.coef_scale,
            ..SimConfig::new(self.n, self.p, self.q, self.seed)
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON report written by `fit` or `fit-hier`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Test covariates in the same layout as the training file.
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, short, default_value = "predictions.csv")]
    pub output: PathBuf,
    /// Estimate each table from this many latent draws instead of exactly.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Criteria to run, e.g. `1,3,5-7`.
    #[arg(long, default_value = "all")]
    pub criteria: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Also write the outcomes as JSON.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn workers_from(flag: Option<&str>) -> Result<Workers> {
    match flag
        .map(str::to_string)
        .or_else(|| std::env::var(WORKERS_ENV).ok())
    {
        Some(v) => Workers::parse(&v),
        None => Ok(Workers::Auto),
    }
}

/// Runs a parsed command, printing a short summary to stdout.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(&a, false),
        Command::FitHier(a) => fit(&a, true),
        Command::Simulate(a) => {
            let (sim, files) = run_simulate(&a.sim_config(), &a.out_dir)?;
            println!(
                "wrote {} (n={}, q={}){}, {}",
                files.y.display(),
                sim.dataset.n(),
                sim.dataset.q(),
                files
                    .x
                    .map(|x| format!(", {}", x.display()))
                    .unwrap_or_default(),
                files.truth.display()
            );
            Ok(())
        }
        Command::Predict(a) => {
            let cfg = PredictConfig {
                fit: a.fit,
                x: a.x,
                output: a.output,
                draws: a.draws,
                seed: a.seed,
                workers: workers_from(a.workers.as_deref())?,
            };
            let rows = run_predict(&cfg)?;
            println!(
                "wrote {} predictive tables to {}",
                rows.len(),
                cfg.output.display()
            );
            Ok(())
        }
        Command::Verify(a) => {
            let mut opts = VerifyOptions {
                workers: workers_from(a.workers.as_deref())?,
                ..VerifyOptions::default()
            };
            if let Some(seed) = a.seed {
                opts.seed = seed;
            }
            let mut outcomes = Vec::new();
            for id in parse_selection(&a.criteria)? {
                let out = run_criterion(id, &opts);
                println!("{}", out.line());
                outcomes.push(out);
            }
            if let Some(path) = &a.output {
                crate::io::write_json(path, &outcomes)?;
            }
            let failed: Vec<u8> = outcomes
                .iter()
                .filter(|o| !o.passed)
                .map(|o| o.id)
                .collect();
            if !failed.is_empty() {
                bail!("criteria failed: {failed:?}");
            }
            Ok(())
        }
    }
}

fn fit(args: &FitArgs, hierarchical: bool) -> Result<()> {
    let config = args.resolve(hierarchical)?;
    let report = run_fit(&config)?;
    println!(
        "fitted q={} outcomes, {} pairs in {:.2} s; wrote {} and {}",
        report.metadata.q,
        report.pairs.len(),
        report.runtime.total_seconds,
        config.output.display(),
        sigma_csv_path(&config.output).display()
    );
    Ok(())
}
