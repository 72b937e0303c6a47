//! CSV ingestion and output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bigmvp::Dataset;
use nalgebra::DMatrix;

/// A comma-separated table with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn width(&self) -> usize {
        self.header
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.rows.first().map(Vec::len))
            .unwrap_or(0)
    }
}

/// Reads a table, treating the first row as a header when any of its
/// cells is not a number. Rows must all have the same width.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let header = match records.first() {
        Some(first) if first.iter().any(|c| c.parse::<f64>().is_err()) => Some(records.remove(0)),
        _ => None,
    };
    let table = Table {
        header,
        rows: records,
    };
    let width = table.width();
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != width {
            bail!(
                "{}: row {} has {} columns, expected {width}",
                path.display(),
                i + 1,
                row.len()
            );
        }
    }
    Ok(table)
}

/// Outcomes and covariates read from disk, with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub outcome_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn parse_binary(path: &Path, table: &Table) -> Result<Vec<Vec<u8>>> {
    let q = table.width();
    let mut cols = vec![Vec::with_capacity(table.rows.len()); q];
    for (i, row) in table.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let v = match cell.as_str() {
                "0" => 0,
                "1" => 1,
                other => bail!(
                    "{}: row {}, column {}: expected 0/1, got `{other}`",
                    path.display(),
                    i + 1,
                    j + 1
                ),
            };
            cols[j].push(v);
        }
    }
    Ok(cols)
}

fn parse_real(path: &Path, table: &Table) -> Result<DMatrix<f64>> {
    let (n, p) = (table.rows.len(), table.width());
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in table.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                anyhow!(
                    "{}: row {}, column {}: expected a number, got `{cell}`",
                    path.display(),
                    i + 1,
                    j + 1
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "{}: row {}, column {}: value is not finite",
                    path.display(),
                    i + 1,
                    j + 1
                );
            }
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Reads a covariate table and optionally prepends a constant column.
pub fn load_covariates(path: &Path, intercept: bool) -> Result<(DMatrix<f64>, Vec<String>)> {
    let table = read_table(path)?;
    let names = table
        .header
        .clone()
        .unwrap_or_else(|| default_names("x", table.width()));
    let x = parse_real(path, &table)?;
    Ok(with_intercept(x, names, intercept))
}

fn with_intercept(
    x: DMatrix<f64>,
    mut names: Vec<String>,
    intercept: bool,
) -> (DMatrix<f64>, Vec<String>) {
    if !intercept {
        return (x, names);
    }
    names.insert(0, "intercept".into());
    (x.insert_column(0, 1.0), names)
}

/// Loads `y` (binary, `n × q`) and optionally `X` (`n × (p-1)` or `n × p`).
/// Without a covariate file the design is the intercept column alone.
pub fn load_dataset(y_path: &Path, x_path: Option<&Path>, intercept: bool) -> Result<LoadedData> {
    let y_table = read_table(y_path)?;
    if y_table.width() == 0 {
        bail!("{}: no outcome columns", y_path.display());
    }
    let outcome_names = y_table
        .header
        .clone()
        .unwrap_or_else(|| default_names("y", y_table.width()));
    let y = parse_binary(y_path, &y_table)?;
    let n = y_table.rows.len();

    let (x, covariate_names) = match x_path {
        Some(path) => {
            let (x, names) = load_covariates(path, intercept)?;
            if x.nrows() != n {
                bail!(
                    "{} has {n} rows but {} has {}",
                    y_path.display(),
                    path.display(),
                    x.nrows()
                );
            }
            (x, names)
        }
        None if intercept => with_intercept(DMatrix::zeros(n, 0), Vec::new(), true),
        None => bail!("no covariate file and no intercept: the design would be empty"),
    };
    if x.ncols() == 0 {
        bail!("design matrix has no columns");
    }
    let dataset = Dataset::new(y, x)?;
    Ok(LoadedData {
        dataset,
        outcome_names,
        covariate_names,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes a CSV with a header row.
pub fn write_csv<S: AsRef<str>>(
    path: &Path,
    header: &[S],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_outcomes(path: &Path, dataset: &Dataset, names: &[String]) -> Result<()> {
    let rows = (0..dataset.n()).map(|i| {
        (0..dataset.q())
            .map(|j| dataset.y_column(j)[i].to_string())
            .collect()
    });
    write_csv(path, names, rows)
}

/// Writes the columns of `x` from `first_col` on, so a leading constant
/// column can be left for the loader to add back.
pub fn write_covariates(
    path: &Path,
    x: &DMatrix<f64>,
    first_col: usize,
    names: &[String],
) -> Result<()> {
    let rows = (0..x.nrows()).map(|i| {
        (first_col..x.ncols())
            .map(|l| format_f64(x[(i, l)]))
            .collect()
    });
    write_csv(path, names, rows)
}

/// Shortest text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
