//! End-to-end experiment suites.
//!
//! Every suite derives its randomness from one master seed: a cell label and
//! trial index give the trial seed, and each method and data source draws from
//! its own labeled child of that seed.

mod csv_tasks;
mod irm_example;
mod risks;
mod toy;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{eiil_partition, kmeans_partition, random_partition, EiilConfig};
use crate::decorr::{decorr_partition, DecorrConfig};
use crate::error::{Error, Result};
use crate::eval::{write_reports_csv, write_reports_json, ExperimentReport};
use crate::models::{fit_erm, train, EnvData, LossKind, ModelKind, ModelParams, Objective, TrainConfig};
use crate::numerics::DataMatrix;
use crate::partition::Partition;
use crate::rng::{labeled_seed, sub_seed};

pub use csv_tasks::{enumerate_tasks, run_csv_tasks, CsvMode, CsvTaskConfig, Task, TaskSet};
pub use irm_example::run_irm_example_suite;
pub use risks::run_risks_suite;
pub use toy::run_toy_dump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "erm")]
    Erm,
    #[serde(rename = "random+irm")]
    RandomIrm,
    #[serde(rename = "eiil")]
    Eiil,
    #[serde(rename = "kmeans+irm")]
    KmeansIrm,
    #[serde(rename = "decorr+irm")]
    DecorrIrm,
    #[serde(rename = "irm_oracle")]
    IrmOracle,
    #[serde(rename = "vrex")]
    Vrex,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Erm, Method::RandomIrm, Method::Eiil, Method::KmeansIrm, Method::DecorrIrm, Method::IrmOracle, Method::Vrex];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::RandomIrm => "random+irm",
            Method::Eiil => "eiil",
            Method::KmeansIrm => "kmeans+irm",
            Method::DecorrIrm => "decorr+irm",
            Method::IrmOracle => "irm_oracle",
            Method::Vrex => "vrex",
        }
    }

    /// `true` for methods that need the ground-truth environments.
    pub fn uses_true_envs(self) -> bool {
        matches!(self, Method::IrmOracle | Method::Vrex)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidConfig(format!("unknown method '{s}', expected one of: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    IrmExample,
    RisksOfIrm,
    ToyDump,
    CsvTasks,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::IrmExample => "irm_example",
            SuiteKind::RisksOfIrm => "risks_of_irm",
            SuiteKind::ToyDump => "toy_dump",
            SuiteKind::CsvTasks => "csv_tasks",
        }
    }
}

/// Training settings a suite config may override; unset fields take the suite default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub n_iter: Option<usize>,
    pub l2: Option<f64>,
    pub warmup: Option<usize>,
    pub dropout_p: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.n_iter {
            cfg.n_iter = v;
        }
        if let Some(v) = self.l2 {
            cfg.l2 = v;
        }
        if let Some(v) = self.warmup {
            cfg.warmup = v;
        }
        if let Some(v) = self.dropout_p {
            cfg.dropout_p = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub suite: SuiteKind,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Trials per cell; defaults to 5, or 10 at full scale.
    #[serde(default)]
    pub trials: Option<usize>,
    /// Feature dimensions `d` for the regression example.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// Training-environment counts.
    #[serde(default)]
    pub env_counts: Option<Vec<usize>>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub full_scale: bool,
    /// Test environments for worst-case error; defaults to 500, or 5000 at full scale.
    #[serde(default)]
    pub test_envs: Option<usize>,
    #[serde(default = "default_n_per_env")]
    pub n_per_env: usize,
    /// Points in the toy scatter.
    #[serde(default = "default_toy_n")]
    pub toy_n: usize,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub decorr: Option<DecorrConfig>,
    #[serde(default)]
    pub csv: Option<CsvTaskConfig>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Erm, Method::RandomIrm, Method::KmeansIrm, Method::Eiil, Method::DecorrIrm, Method::IrmOracle]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_n_per_env() -> usize {
    1000
}

fn default_toy_n() -> usize {
    1000
}

impl SuiteConfig {
    pub fn new(suite: SuiteKind) -> Self {
        Self {
            suite,
            methods: default_methods(),
            trials: None,
            dims: None,
            env_counts: None,
            output: default_output(),
            seed: 0,
            full_scale: false,
            test_envs: None,
            n_per_env: default_n_per_env(),
            toy_n: default_toy_n(),
            train: TrainOverrides::default(),
            decorr: None,
            csv: None,
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigParse(m) => Error::ConfigParse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("method list is empty".into()));
        }
        if self.trials == Some(0) {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.test_envs == Some(0) {
            return Err(Error::InvalidConfig("test_envs must be >= 1".into()));
        }
        if self.n_per_env < 2 {
            return Err(Error::InvalidConfig("n_per_env must be >= 2".into()));
        }
        if let Some(d) = &self.decorr {
            d.validate()?;
        }
        if self.suite == SuiteKind::CsvTasks && self.csv.is_none() {
            return Err(Error::InvalidConfig("csv_tasks suite needs a [csv] section".into()));
        }
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(if self.full_scale { 10 } else { 5 })
    }

    pub fn test_envs(&self) -> usize {
        self.test_envs.unwrap_or(if self.full_scale { 5000 } else { 500 })
    }

    pub fn decorr_base(&self) -> DecorrConfig {
        self.decorr.clone().unwrap_or_default()
    }

    /// The config with every suite default filled in, for report echoes.
    pub fn resolved_echo(&self) -> serde_json::Value {
        let mut r = self.clone();
        r.trials = Some(self.trials());
        r.test_envs = Some(self.test_envs());
        r.decorr = Some(self.decorr_base());
        match self.suite {
            SuiteKind::IrmExample => {
                r.dims.get_or_insert_with(|| irm_example::DEFAULT_DIMS.to_vec());
                r.env_counts.get_or_insert_with(|| irm_example::DEFAULT_ENV_COUNTS.to_vec());
            }
            SuiteKind::RisksOfIrm => {
                r.env_counts.get_or_insert_with(|| risks::DEFAULT_ENV_COUNTS.to_vec());
            }
            _ => {}
        }
        serde_json::to_value(&r).unwrap_or(serde_json::Value::Null)
    }
}

/// Runs the configured suite and returns its reports without writing files.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<ExperimentReport>> {
    cfg.validate()?;
    match cfg.suite {
        SuiteKind::IrmExample => run_irm_example_suite(cfg),
        SuiteKind::RisksOfIrm => run_risks_suite(cfg),
        SuiteKind::ToyDump => run_toy_dump(cfg),
        SuiteKind::CsvTasks => run_csv_tasks(cfg),
    }
}

/// Writes `<output>/<suite>.json` and `<output>/<suite>.csv`.
pub fn write_suite_outputs(cfg: &SuiteConfig, reports: &[ExperimentReport]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(&cfg.output)?;
    let json = cfg.output.join(format!("{}.json", cfg.suite.name()));
    let csv = cfg.output.join(format!("{}.csv", cfg.suite.name()));
    write_reports_json(reports, &json)?;
    write_reports_csv(reports, &csv)?;
    Ok((json, csv))
}

/// Seed for one trial of one grid cell.
pub(crate) fn trial_seed(master: u64, cell: &str, trial: usize) -> u64 {
    sub_seed(labeled_seed(master, cell), trial as u64)
}

/// The partition a method trains on, or `None` for methods that train on
/// the pooled data (ERM) or on the true environments.
pub(crate) fn method_partition(
    method: Method,
    pooled: &EnvData,
    k: usize,
    decorr: &DecorrConfig,
    reference: Option<&ModelParams>,
    seed: u64,
) -> Result<Option<Partition>> {
    let n = pooled.len();
    let seed = labeled_seed(seed, method.name());
    let part = match method {
        Method::Erm | Method::IrmOracle | Method::Vrex => return Ok(None),
        Method::RandomIrm => random_partition(n, k, seed)?,
        Method::KmeansIrm => kmeans_partition(&DataMatrix::new(pooled.x.clone())?, k, seed)?,
        Method::DecorrIrm => {
            let cfg = DecorrConfig { k, seed, ..decorr.clone() };
            decorr_partition(&DataMatrix::new(pooled.x.clone())?, &cfg)?
        }
        Method::Eiil => {
            let reference = reference.ok_or_else(|| Error::InvalidInput("EIIL needs a reference model".into()))?;
            let cfg = EiilConfig { seed, ..EiilConfig::default() };
            eiil_partition(&DataMatrix::new(pooled.x.clone())?, pooled.y.view(), &cfg, reference)?
        }
    };
    Ok(Some(part))
}

/// Pooled ERM reference used by EIIL; linear models use the closed form.
pub fn erm_reference(pooled: &EnvData, kind: ModelKind, loss: LossKind, cfg: &TrainConfig) -> Result<ModelParams> {
    let cfg = TrainConfig { closed_form: kind == ModelKind::Linear, ..cfg.clone() };
    fit_erm(std::slice::from_ref(pooled), kind, loss, &cfg)
}

/// Trains `method` and returns the fitted model. `true_envs` are required by
/// the oracle methods; `validation` enables early stopping.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_method(
    method: Method,
    pooled: &EnvData,
    true_envs: Option<&[EnvData]>,
    k: usize,
    kind: ModelKind,
    loss: LossKind,
    train_cfg: &TrainConfig,
    decorr: &DecorrConfig,
    validation: Option<&EnvData>,
    seed: u64,
) -> Result<ModelParams> {
    let cfg = TrainConfig { seed: labeled_seed(seed, &format!("{}-train", method.name())), ..train_cfg.clone() };
    let reference = if method == Method::Eiil { Some(erm_reference(pooled, kind, loss, &cfg)?) } else { None };
    let single = std::slice::from_ref(pooled);
    match method {
        Method::Erm => {
            if validation.is_none() && kind == ModelKind::Linear {
                fit_erm(single, kind, loss, &TrainConfig { closed_form: true, ..cfg })
            } else {
                train(single, kind, loss, Objective::Erm, &cfg, validation)
            }
        }
        Method::IrmOracle | Method::Vrex => {
            let envs = true_envs.ok_or_else(|| Error::InvalidInput(format!("{method} needs the true environments")))?;
            let objective = if method == Method::Vrex { Objective::Vrex } else { Objective::Irmv1 };
            if method == Method::Vrex && envs.len() < 2 {
                return Err(Error::InvalidInput("V-REx needs at least two environments".into()));
            }
            train(envs, kind, loss, objective, &cfg, validation)
        }
        _ => {
            let part = method_partition(method, pooled, k, decorr, reference.as_ref(), seed)?.expect("partitioning method");
            let envs = pooled.split(part.k, &part.assignments)?;
            train(&envs, kind, loss, Objective::Irmv1, &cfg, validation)
        }
    }
}
