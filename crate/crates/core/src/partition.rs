use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{frobenius_dist_sq, pearson_correlation, DataMatrix};

/// Disjoint assignment of sample indices to `k` non-empty environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    pub assignments: Vec<usize>,
    #[serde(default)]
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Partition {
    /// Builds a partition and checks the cover and non-emptiness invariants.
    pub fn new(k: usize, assignments: Vec<usize>, objective_trace: Vec<f64>, seed: u64) -> Result<Self> {
        let p = Self { k, assignments, objective_trace, seed };
        p.validate()?;
        Ok(p)
    }

    /// All indices in one environment.
    pub fn single(n: usize, seed: u64) -> Self {
        Self { k: 1, assignments: vec![0; n], objective_trace: Vec::new(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("partition with k = 0".into()));
        }
        if let Some((i, e)) = self.assignments.iter().enumerate().find(|(_, &e)| e >= self.k) {
            return Err(Error::InvalidInput(format!("sample {i} assigned to environment {e} >= k = {}", self.k)));
        }
        if let Some(e) = self.sizes().iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("environment {e} is empty")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &e in &self.assignments {
            if e < self.k {
                sizes[e] += 1;
            }
        }
        sizes
    }

    /// Sample indices per environment, ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &e) in self.assignments.iter().enumerate() {
            groups[e].push(i);
        }
        groups
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Unweighted correlation summary of one realized environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentDiagnostics {
    pub env: usize,
    pub size: usize,
    /// `d^2(R, I)`; absent for environments with fewer than two rows.
    pub dist_sq: Option<f64>,
    pub correlation: Option<Vec<Vec<f64>>>,
}

pub fn diagnostics(x: ArrayView2<'_, f64>, partition: &Partition) -> Result<Vec<EnvironmentDiagnostics>> {
    if x.nrows() != partition.n() {
        return Err(Error::Dimension(format!(
            "partition covers {} rows, data has {}",
            partition.n(),
            x.nrows()
        )));
    }
    let owned = x.to_owned();
    let full = DataMatrix::new(owned)?;
    partition
        .groups()
        .into_iter()
        .enumerate()
        .map(|(env, idx)| {
            let size = idx.len();
            if size < 2 {
                return Ok(EnvironmentDiagnostics { env, size, dist_sq: None, correlation: None });
            }
            let sub = full.select_rows(&idx)?;
            let r = pearson_correlation(sub.view())?;
            Ok(EnvironmentDiagnostics {
                env,
                size,
                dist_sq: Some(frobenius_dist_sq(&r)),
                correlation: Some(r.r.rows().into_iter().map(|row| row.to_vec()).collect()),
            })
        })
        .collect()
}
