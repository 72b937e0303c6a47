//! Run configuration: a plain `key = value` file, overridden by command-line
//! flags, with `BIGMVP_WORKERS` as the last fallback for the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use bigmvp::hierarchical::{HierConfig, ScaleUpdate};
use bigmvp::{BetaPrior, CorrPrior, NewtonOptions, Stage2Options};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const WORKERS_ENV: &str = "BIGMVP_WORKERS";

const KNOWN_KEYS: &[&str] = &[
    "y",
    "x",
    "intercept",
    "output",
    "seed",
    "workers",
    "alpha",
    "m",
    "adjust_variance",
    "project_pd",
    "hierarchical",
    "iters",
    "burnin",
    "a_omega",
    "b_omega",
    "scale_update",
    "tolerance",
    "max_iterations",
    "beta_mean",
    "beta_covariance",
    "corr_kind",
    "corr_nu",
    "corr_q",
    "corr_omega",
    "corr_symmetric",
];

/// Keys are case-insensitive and `-`, `.` and `_` are interchangeable, so
/// `corr.kind`, `corr-kind` and `corr_kind` name the same setting.
pub fn normalize_key(key: &str) -> String {
    key.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == '-' || c == '.' { '_' } else { c })
        .collect()
}

/// Raw settings before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. Blank lines and lines starting with `#`
    /// are ignored; a value may be wrapped in double quotes.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", idx + 1))?;
            let key = normalize_key(key);
            if key.is_empty() {
                bail!("line {}: empty key", idx + 1);
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", idx + 1);
            }
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if values.insert(key.clone(), value.to_string()).is_some() {
                bail!("line {}: `{key}` set twice", idx + 1);
            }
        }
        Ok(Settings { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config file {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize_key(key), value.into());
    }

    /// Applies every entry of `other` on top of `self`.
    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("setting `{key}`: cannot parse `{v}`: {e}")),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(Some(true)),
                "false" | "no" | "off" | "0" => Ok(Some(false)),
                _ => bail!("setting `{key}`: expected true/false, got `{v}`"),
            },
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v)
                .map(Some)
                .with_context(|| format!("setting `{key}`")),
        }
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    let out = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| anyhow!("cannot parse `{s}`: {e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Workers {
    Auto,
    Count(usize),
}

impl Workers {
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("auto") {
            return Ok(Workers::Auto);
        }
        match t.parse::<usize>() {
            Ok(0) | Err(_) => bail!("workers must be a positive integer or `auto`, got `{t}`"),
            Ok(n) => Ok(Workers::Count(n)),
        }
    }

    pub fn threads(self) -> Option<usize> {
        match self {
            Workers::Auto => None,
            Workers::Count(n) => Some(n),
        }
    }

    /// Number of threads that will actually run.
    pub fn effective(self) -> usize {
        match self {
            Workers::Auto => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            Workers::Count(n) => n,
        }
    }
}

/// Gaussian coefficient prior. `mean` holds one value (shared by every
/// coefficient) or `p` values; `covariance` holds one value (isotropic), `p`
/// values (diagonal) or `p²` values (full, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPriorSpec {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl Default for BetaPriorSpec {
    fn default() -> Self {
        BetaPriorSpec {
            mean: vec![0.0],
            covariance: vec![25.0],
        }
    }
}

impl BetaPriorSpec {
    pub fn resolve(&self, p: usize) -> Result<BetaPrior> {
        let mean = match self.mean.len() {
            1 => DVector::from_element(p, self.mean[0]),
            l if l == p => DVector::from_vec(self.mean.clone()),
            l => bail!("coefficient prior mean has {l} values; expected 1 or p = {p}"),
        };
        let cov = match self.covariance.len() {
            1 => DMatrix::identity(p, p) * self.covariance[0],
            l if l == p => DMatrix::from_diagonal(&DVector::from_vec(self.covariance.clone())),
            l if l == p * p => DMatrix::from_row_slice(p, p, &self.covariance),
            l => bail!(
                "coefficient prior covariance has {l} values; expected 1, p or p² with p = {p}"
            ),
        };
        Ok(BetaPrior::new(mean, cov)?)
    }
}

/// Correlation prior as configured; `q` defaults to the number of outcomes
/// in the data for the kinds that need it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrPriorSpec {
    pub kind: String,
    pub nu: Option<f64>,
    pub q: Option<usize>,
    pub omega: Option<f64>,
    pub symmetric: bool,
}

impl Default for CorrPriorSpec {
    fn default() -> Self {
        CorrPriorSpec {
            kind: "lkj".into(),
            nu: None,
            q: None,
            omega: None,
            symmetric: false,
        }
    }
}

impl CorrPriorSpec {
    pub fn resolve(&self, data_q: usize) -> Result<CorrPrior> {
        let q = self.q.unwrap_or(data_q);
        let need_nu = || {
            self.nu
                .ok_or_else(|| anyhow!("prior `{}` needs corr_nu", self.kind))
        };
        let prior = match normalize_key(&self.kind).as_str() {
            "uniform" => CorrPrior::Uniform,
            "lkj" | "lkj_marginal" => CorrPrior::lkj(self.nu.unwrap_or(1.0), q.max(2))?,
            "iw" | "inverse_wishart" | "iw_marginal" => {
                CorrPrior::inverse_wishart(need_nu()?, q.max(2))?
            }
            "hw" | "huang_wand" | "hw_marginal" => {
                CorrPrior::huang_wand(self.nu.unwrap_or(2.0), self.symmetric)?
            }
            "fisher" | "fisher_gaussian" => CorrPrior::fisher_gaussian(
                self.omega
                    .ok_or_else(|| anyhow!("prior `{}` needs corr_omega", self.kind))?,
            )?,
            other => bail!("unknown correlation prior `{other}` (uniform, lkj, iw, hw, fisher)"),
        };
        Ok(prior)
    }
}

/// Fully typed configuration for `fit` and `fit-hier`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub y: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub intercept: bool,
    pub beta_prior: BetaPriorSpec,
    pub corr_prior: CorrPriorSpec,
    pub m: usize,
    pub adjust_variance: bool,
    pub project_pd: bool,
    pub hierarchical: bool,
    pub iters: usize,
    pub burnin: usize,
    pub a_omega: f64,
    pub b_omega: f64,
    pub scale_update: ScaleUpdate,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub workers: Workers,
    pub output: PathBuf,
    pub alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let newton = NewtonOptions::default();
        RunConfig {
            y: None,
            x: None,
            intercept: true,
            beta_prior: BetaPriorSpec::default(),
            corr_prior: CorrPriorSpec::default(),
            m: Stage2Options::default().m,
            adjust_variance: false,
            project_pd: false,
            hierarchical: false,
            iters: 200,
            burnin: 50,
            a_omega: 1.0,
            b_omega: 1.0,
            scale_update: ScaleUpdate::Conjugate,
            tolerance: newton.tolerance,
            max_iterations: newton.max_iterations,
            seed: 0,
            workers: Workers::Auto,
            output: PathBuf::from("fit.json"),
            alpha: 0.05,
        }
    }
}

impl RunConfig {
    /// Builds a configuration from layered settings. `env_workers` is the
    /// value of `BIGMVP_WORKERS`, consulted only when no layer sets workers.
    pub fn from_settings(settings: &Settings, env_workers: Option<&str>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(v) = settings.get("y") {
            c.y = Some(PathBuf::from(v));
        }
        if let Some(v) = settings.get("x") {
            c.x = Some(PathBuf::from(v));
        }
        if let Some(v) = settings.get("output") {
            c.output = PathBuf::from(v);
        }
        c.intercept = settings.flag("intercept")?.unwrap_or(c.intercept);
        c.adjust_variance = settings
            .flag("adjust_variance")?
            .unwrap_or(c.adjust_variance);
        c.project_pd = settings.flag("project_pd")?.unwrap_or(c.project_pd);
        c.hierarchical = settings.flag("hierarchical")?.unwrap_or(c.hierarchical);
        c.m = settings.parsed("m")?.unwrap_or(c.m);
        c.iters = settings.parsed("iters")?.unwrap_or(c.iters);
        c.burnin = settings.parsed("burnin")?.unwrap_or(c.burnin);
        c.a_omega = settings.parsed("a_omega")?.unwrap_or(c.a_omega);
        c.b_omega = settings.parsed("b_omega")?.unwrap_or(c.b_omega);
        c.tolerance = settings.parsed("tolerance")?.unwrap_or(c.tolerance);
        c.max_iterations = settings
            .parsed("max_iterations")?
            .unwrap_or(c.max_iterations);
        c.seed = settings.parsed("seed")?.unwrap_or(c.seed);
        c.alpha = settings.parsed("alpha")?.unwrap_or(c.alpha);
        if let Some(v) = settings.get("scale_update") {
            c.scale_update = match normalize_key(v).as_str() {
                "conjugate" => ScaleUpdate::Conjugate,
                "per_coefficient" => ScaleUpdate::PerCoefficient,
                _ => bail!(
                    "setting `scale_update`: expected conjugate or per-coefficient, got `{v}`"
                ),
            };
        }
        c.workers = match settings.get("workers").or(env_workers) {
            Some(v) => Workers::parse(v)?,
            None => Workers::Auto,
        };
        if let Some(mean) = settings.list("beta_mean")? {
            c.beta_prior.mean = mean;
        }
        if let Some(cov) = settings.list("beta_covariance")? {
            c.beta_prior.covariance = cov;
        }
        if let Some(kind) = settings.get("corr_kind") {
            c.corr_prior.kind = kind.to_string();
        }
        c.corr_prior.nu = settings.parsed("corr_nu")?;
        c.corr_prior.q = settings.parsed("corr_q")?;
        c.corr_prior.omega = settings.parsed("corr_omega")?;
        c.corr_prior.symmetric = settings.flag("corr_symmetric")?.unwrap_or(false);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha {} outside (0, 1)", self.alpha);
        }
        self.stage2_options().validate()?;
        if self.iters <= self.burnin {
            bail!("iters {} must exceed burnin {}", self.iters, self.burnin);
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            bail!("Newton tolerance and iteration cap must be positive");
        }
        if !self.intercept && self.x.is_none() && self.y.is_some() {
            bail!("without an intercept a covariate file is required");
        }
        Ok(())
    }

    /// Input files must exist and be readable before any work starts.
    pub fn check_inputs(&self) -> Result<()> {
        let y = self
            .y
            .as_ref()
            .ok_or_else(|| anyhow!("no outcome file given (y)"))?;
        for path in std::iter::once(y).chain(self.x.as_ref()) {
            std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        }
        Ok(())
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..NewtonOptions::default()
        }
    }

    pub fn stage2_options(&self) -> Stage2Options {
        Stage2Options {
            m: self.m,
            adjust_variance: self.adjust_variance,
            project_pd: self.project_pd,
            ..Stage2Options::default()
        }
    }

    pub fn hier_config(&self, p: usize) -> HierConfig {
        HierConfig {
            a_omega: self.a_omega,
            b_omega: self.b_omega,
            iters: self.iters,
            burnin: self.burnin,
            scale_update: self.scale_update,
            newton: self.newton_options(),
            stage2: self.stage2_options(),
            ..HierConfig::default_for(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_syntax() {
        let s = Settings::parse(
            "# comment\n\nm = 30\ncorr.kind = \"uniform\"\nbeta-covariance = 1, 2\n",
        )
        .unwrap();
        assert_eq!(s.get("m"), Some("30"));
        assert_eq!(s.get("corr_kind"), Some("uniform"));
        assert_eq!(s.get("beta.covariance"), Some("1, 2"));
        assert!(Settings::parse("m 30").is_err());
        assert!(Settings::parse("mm = 30").is_err());
        assert!(Settings::parse("m = 3\nm = 4").is_err());
    }

    #[test]
    fn later_layers_win_and_env_is_last() {
        let mut s = Settings::parse("m = 30\nworkers = 2\nalpha = 0.1").unwrap();
        let mut flags = Settings::default();
        flags.set("m", "40");
        s.overlay(&flags);
        let c = RunConfig::from_settings(&s, Some("7")).unwrap();
        assert_eq!(c.m, 40);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.workers, Workers::Count(2));

        let c = RunConfig::from_settings(&Settings::parse("m = 30").unwrap(), Some("7")).unwrap();
        assert_eq!(c.workers, Workers::Count(7));
        let c = RunConfig::from_settings(&Settings::default(), None).unwrap();
        assert_eq!(c.workers, Workers::Auto);
    }

    #[test]
    fn rejects_invalid_values() {
        let bad =
            |text: &str| RunConfig::from_settings(&Settings::parse(text).unwrap(), None).is_err();
        assert!(bad("alpha = 1.0"));
        assert!(bad("m = 4"));
        assert!(bad("workers = 0"));
        assert!(bad("iters = 10\nburnin = 10"));
        assert!(bad("adjust_variance = maybe"));
        assert!(!bad("workers = auto\nadjust_variance = yes"));
    }

    #[test]
    fn priors_resolve_against_the_data() {
        let spec = BetaPriorSpec {
            mean: vec![0.0],
            covariance: vec![1.0, 2.0, 3.0],
        };
        let prior = spec.resolve(3).unwrap();
        assert_eq!(prior.covariance()[(2, 2)], 3.0);
        assert!(spec.resolve(2).is_err());

        let lkj = CorrPriorSpec::default().resolve(10).unwrap();
        assert_eq!(lkj, CorrPrior::LkjMarginal { nu: 1.0, q: 10 });
        let fisher = CorrPriorSpec {
            kind: "fisher".into(),
            ..CorrPriorSpec::default()
        };
        assert!(fisher.resolve(3).is_err());
    }
}
