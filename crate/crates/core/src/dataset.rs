//! CSV ingestion and export.
//!
//! Files have a header row, '.' decimals and no missing cells. A column that
//! does not parse as numbers is accepted only if it has exactly two distinct
//! values, which are encoded as 0 and 1 in sorted order.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EnvData;
use crate::numerics::DataMatrix;
use crate::partition::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub target: String,
    /// Feature columns; `None` takes every usable column except target and environment.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub env_column: Option<String>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    pub fn new(target: impl Into<String>) -> Self {
        Self { target: target.into(), features: None, env_column: None, standardize: true }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Environment index per row, when the schema names an environment column.
    pub env: Option<Vec<usize>>,
    /// Original labels for each environment index.
    pub env_labels: Vec<String>,
}

enum Column {
    Numeric(Vec<f64>),
    Binary(Vec<f64>),
    Categorical { first_bad_row: usize, value: String },
}

/// `row` is the 1-based data row (the header is row 0).
fn parse_column(name: &str, cells: &[&str]) -> Result<Column> {
    let mut values = Vec::with_capacity(cells.len());
    let mut bad = None;
    for (row, cell) in cells.iter().enumerate() {
        let cell = cell.trim();
        if cell.is_empty() {
            return Err(Error::Csv { context: format!("row {}, column '{name}'", row + 1), message: "missing value".into() });
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => {
                return Err(Error::Csv { context: format!("row {}, column '{name}'", row + 1), message: format!("non-finite value '{cell}'") });
            }
            Err(_) => {
                bad.get_or_insert((row + 1, cell.to_string()));
            }
        }
    }
    let Some((first_bad_row, value)) = bad else {
        return Ok(Column::Numeric(values));
    };
    let levels: BTreeSet<&str> = cells.iter().map(|c| c.trim()).collect();
    if levels.len() == 2 {
        let hi = *levels.iter().next_back().expect("two levels");
        return Ok(Column::Binary(cells.iter().map(|c| f64::from(u8::from(c.trim() == hi))).collect()));
    }
    Ok(Column::Categorical { first_bad_row, value })
}

fn categorical_error(name: &str, row: usize, value: &str) -> Error {
    Error::Csv {
        context: format!("row {row}, column '{name}'"),
        message: format!("non-numeric value '{value}' in a column with more than two levels"),
    }
}

impl Dataset {
    pub fn read_csv(path: &Path, schema: &CsvSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_reader(file, schema)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut records = Vec::new();
        for rec in rdr.records() {
            records.push(rec?);
        }
        if records.is_empty() {
            return Err(Error::Csv { context: "data".into(), message: "no data rows".into() });
        }
        let index_of = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Csv { context: "header".into(), message: format!("column '{name}' not found") })
        };
        let cells = |j: usize| -> Vec<&str> { records.iter().map(|r| r.get(j).unwrap_or("")).collect() };

        let target_idx = index_of(&schema.target)?;
        let y = match parse_column(&schema.target, &cells(target_idx))? {
            Column::Numeric(v) | Column::Binary(v) => Array1::from(v),
            Column::Categorical { first_bad_row, value } => return Err(categorical_error(&schema.target, first_bad_row, &value)),
        };

        let env_idx = schema.env_column.as_deref().map(index_of).transpose()?;
        let (env, env_labels) = match env_idx {
            Some(j) => {
                let raw = cells(j);
                let mut labels: Vec<String> = raw.iter().map(|c| c.trim().to_string()).collect::<BTreeSet<_>>().into_iter().collect();
                if labels.iter().all(|l| l.parse::<f64>().is_ok()) {
                    labels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
                }
                let ids = raw.iter().map(|c| labels.iter().position(|l| l == c.trim()).expect("label present")).collect();
                (Some(ids), labels)
            }
            None => (None, Vec::new()),
        };

        let explicit = schema.features.is_some();
        let feature_cols: Vec<usize> = match &schema.features {
            Some(names) => names.iter().map(|n| index_of(n)).collect::<Result<_>>()?,
            None => (0..headers.len()).filter(|&j| j != target_idx && Some(j) != env_idx).collect(),
        };
        let mut feature_names = Vec::new();
        let mut columns = Vec::new();
        for j in feature_cols {
            match parse_column(&headers[j], &cells(j))? {
                Column::Numeric(v) | Column::Binary(v) => {
                    feature_names.push(headers[j].clone());
                    columns.push(v);
                }
                Column::Categorical { first_bad_row, value } if explicit => {
                    return Err(categorical_error(&headers[j], first_bad_row, &value));
                }
                Column::Categorical { .. } => log::warn!("skipping non-numeric column '{}'", headers[j]),
            }
        }
        if columns.is_empty() {
            return Err(Error::Csv { context: "header".into(), message: "no usable feature columns".into() });
        }
        let n = y.len();
        let mut x = Array2::from_shape_fn((n, columns.len()), |(i, j)| columns[j][i]);
        if schema.standardize && n >= 2 {
            x = DataMatrix::new(x)?.standardized().into_inner();
        }
        Ok(Self { feature_names, x, y, env, env_labels })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn features(&self) -> Result<DataMatrix> {
        DataMatrix::new(self.x.clone())
    }

    pub fn env_data(&self) -> Result<EnvData> {
        EnvData::new(self.x.clone(), self.y.clone())
    }

    /// Partition given by the environment column.
    pub fn env_partition(&self, seed: u64) -> Result<Option<Partition>> {
        self.env.as_ref().map(|ids| Partition::new(self.env_labels.len(), ids.clone(), Vec::new(), seed)).transpose()
    }

    /// Writes features, target (column `target`) and, if present, environment
    /// ids (column `env`). Values use shortest round-trip formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("target".into());
        if self.env.is_some() {
            header.push("env".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.y[i].to_string());
            if let Some(env) = &self.env {
                let label = self.env_labels.get(env[i]).cloned().unwrap_or_else(|| env[i].to_string());
                row.push(label);
            }
            w.write_record(&row)?;
        }
        Ok(())
    }

    /// Dataset over environments, with the environment column filled from their order.
    pub fn from_envs(envs: &[EnvData], feature_names: Option<Vec<String>>) -> Result<Self> {
        let pooled = EnvData::pooled(envs)?;
        let p = pooled.x.ncols();
        let feature_names = feature_names.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
        if feature_names.len() != p {
            return Err(Error::Dimension(format!("{} names for {p} features", feature_names.len())));
        }
        let env = envs.iter().enumerate().flat_map(|(e, d)| std::iter::repeat_n(e, d.len())).collect();
        Ok(Self {
            feature_names,
            x: pooled.x,
            y: pooled.y,
            env: Some(env),
            env_labels: (0..envs.len()).map(|e| e.to_string()).collect(),
        })
    }
}
