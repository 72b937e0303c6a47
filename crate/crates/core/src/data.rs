use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary outcomes paired with covariates.
///
/// `y` is stored column by column (one `Vec<u8>` of length `n` per outcome)
/// because both inference stages walk whole outcome columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<Vec<u8>>,
    x: DMatrix<f64>,
}

impl Dataset {
    /// Builds a dataset from outcome columns and an `n × p` design matrix.
    pub fn new(y_columns: Vec<Vec<u8>>, x: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if x.ncols() == 0 {
            return Err(Error::shape("design matrix has no columns"));
        }
        if y_columns.is_empty() {
            return Err(Error::shape("no outcome columns"));
        }
        for (j, col) in y_columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::shape(format!(
                    "outcome column {j} has {} rows, design matrix has {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|&v| v > 1) {
                return Err(Error::domain(format!(
                    "outcome column {j}, row {i}: expected 0/1, got {}",
                    col[i]
                )));
            }
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "design matrix entry (row {}, column {}) is not finite",
                pos % n.max(1),
                pos / n.max(1)
            )));
        }
        Ok(Dataset { y: y_columns, x })
    }

    /// Builds a dataset from an `n × q` outcome matrix.
    pub fn from_matrix(y: &DMatrix<u8>, x: DMatrix<f64>) -> Result<Self> {
        let cols = (0..y.ncols())
            .map(|j| y.column(j).iter().copied().collect())
            .collect();
        Self::new(cols, x)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_column(&self, j: usize) -> &[u8] {
        &self.y[j]
    }

    pub fn y_columns(&self) -> &[Vec<u8>] {
        &self.y
    }

    pub(crate) fn check_outcome(&self, j: usize) -> Result<()> {
        if j >= self.q() {
            return Err(Error::Index(format!(
                "outcome {j} out of range for q = {}",
                self.q()
            )));
        }
        Ok(())
    }

    /// Copy with outcome columns reordered: column `j` of the result is
    /// column `order[j]` of `self`.
    pub fn permute_outcomes(&self, order: &[usize]) -> Result<Dataset> {
        if order.len() != self.q() {
            return Err(Error::shape("permutation length differs from q"));
        }
        let mut seen = vec![false; self.q()];
        let mut cols = Vec::with_capacity(self.q());
        for &o in order {
            self.check_outcome(o)?;
            if std::mem::replace(&mut seen[o], true) {
                return Err(Error::domain(format!(
                    "outcome {o} repeated in permutation"
                )));
            }
            cols.push(self.y[o].clone());
        }
        Dataset::new(cols, self.x.clone())
    }

    /// Copy restricted to the listed outcomes.
    pub fn select_outcomes(&self, which: &[usize]) -> Result<Dataset> {
        let mut cols = Vec::with_capacity(which.len());
        for &o in which {
            self.check_outcome(o)?;
            cols.push(self.y[o].clone());
        }
        Dataset::new(cols, self.x.clone())
    }

    /// Copy with outcome `j` recoded `0 ↔ 1`.
    pub fn flip_outcome(&self, j: usize) -> Result<Dataset> {
        self.check_outcome(j)?;
        let mut cols = self.y.clone();
        for v in &mut cols[j] {
            *v = 1 - *v;
        }
        Dataset::new(cols, self.x.clone())
    }

    /// Fraction of ones in each outcome column.
    pub fn prevalence(&self) -> Vec<f64> {
        let n = self.n().max(1) as f64;
        self.y
            .iter()
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(Dataset::new(vec![vec![0, 1, 1]], x.clone()).is_ok());
        assert!(matches!(
            Dataset::new(vec![vec![0, 2, 1]], x.clone()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Dataset::new(vec![vec![0, 1]], x.clone()),
            Err(Error::Shape(_))
        ));
        let mut bad = x.clone();
        bad[(1, 0)] = f64::NAN;
        assert!(Dataset::new(vec![vec![0, 1, 1]], bad).is_err());
        // n = 0 is allowed
        assert!(Dataset::new(vec![vec![]], DMatrix::zeros(0, 2)).is_ok());
    }

    #[test]
    fn permutation_and_flip() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let d = Dataset::new(vec![vec![0, 1], vec![1, 1], vec![0, 0]], x).unwrap();
        let p = d.permute_outcomes(&[2, 0, 1]).unwrap();
        assert_eq!(p.y_column(0), &[0, 0]);
        assert_eq!(p.y_column(2), &[1, 1]);
        assert!(d.permute_outcomes(&[0, 0, 1]).is_err());
        let f = d.flip_outcome(0).unwrap();
        assert_eq!(f.y_column(0), &[1, 0]);
        assert_eq!(d.prevalence(), vec![0.5, 1.0, 0.0]);
    }
}
