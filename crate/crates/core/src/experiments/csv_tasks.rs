use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_method, trial_seed, Method, SuiteConfig};
use crate::datagen::biased_resample;
use crate::dataset::{CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::eval::{task_set_summary, ExperimentReport};
use crate::models::{prediction_error, EnvData, ModelKind, TrainConfig};
use crate::numerics::column_mean_sd;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSet {
    /// All but two environments train; one validates, one tests.
    #[default]
    ThreeTrain,
    /// One environment trains, one validates, the rest test.
    OneTrain,
}

/// How the CSV is turned into train/test problems.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvMode {
    Tasks(TaskSet),
    BiasedResample { bias_column: String, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTaskConfig {
    pub input: PathBuf,
    pub schema: CsvSchema,
    #[serde(default)]
    pub task_set: TaskSet,
    /// Setting this switches to the biased-resample protocol.
    #[serde(default)]
    pub bias_column: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    /// Environments produced by the partitioning methods.
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_model() -> ModelKind {
    ModelKind::Mlp
}

fn default_k() -> usize {
    2
}

impl CsvTaskConfig {
    pub fn mode(&self) -> Result<CsvMode> {
        match (&self.bias_column, self.alpha) {
            (None, None) => Ok(CsvMode::Tasks(self.task_set)),
            (Some(c), Some(a)) => Ok(CsvMode::BiasedResample { bias_column: c.clone(), alpha: a }),
            _ => Err(Error::InvalidConfig("bias_column and alpha must be given together".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub train: Vec<usize>,
    pub validation: usize,
    pub test: Vec<usize>,
}

/// All tasks of a task set over `n_envs` environments, in lexicographic
/// order of the training set and then of the validation environment.
pub fn enumerate_tasks(n_envs: usize, set: TaskSet) -> Result<Vec<Task>> {
    if n_envs < 3 {
        return Err(Error::InvalidInput(format!("task sets need at least 3 environments, got {n_envs}")));
    }
    let mut tasks = Vec::new();
    match set {
        TaskSet::ThreeTrain => {
            // choose the two held-out environments, ordered as (validation, test)
            for a in 0..n_envs {
                for b in 0..n_envs {
                    if a == b {
                        continue;
                    }
                    let train = (0..n_envs).filter(|&e| e != a && e != b).collect();
                    tasks.push(Task { train, validation: a, test: vec![b] });
                }
            }
            tasks.sort_by(|x, y| (&x.train, x.validation).cmp(&(&y.train, y.validation)));
        }
        TaskSet::OneTrain => {
            for t in 0..n_envs {
                for v in (0..n_envs).filter(|&v| v != t) {
                    let test = (0..n_envs).filter(|&e| e != t && e != v).collect();
                    tasks.push(Task { train: vec![t], validation: v, test });
                }
            }
        }
    }
    Ok(tasks)
}

struct Scaler {
    mean: ndarray::Array1<f64>,
    sd: ndarray::Array1<f64>,
}

impl Scaler {
    fn fit(x: &Array2<f64>) -> Self {
        let (mean, sd) = column_mean_sd(x.view());
        Self { mean, sd }
    }

    fn apply(&self, d: &EnvData) -> EnvData {
        let mut x = d.x.clone();
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            let s = if self.sd[j] > 0.0 { self.sd[j] } else { 1.0 };
            col.mapv_inplace(|v| (v - self.mean[j]) / s);
        }
        EnvData { x, y: d.y.clone() }
    }
}

/// Tabular protocol on an ingested CSV: either the leave-environments-out
/// task set with early stopping on the validation environment, or repeated
/// biased train/test resampling. One report per method.
pub fn run_csv_tasks(cfg: &SuiteConfig) -> Result<Vec<ExperimentReport>> {
    let csv = cfg.csv.as_ref().ok_or_else(|| Error::InvalidConfig("csv_tasks suite needs a [csv] section".into()))?;
    let schema = CsvSchema { standardize: false, ..csv.schema.clone() };
    let data = Dataset::read_csv(&csv.input, &schema)?;
    let loss = csv.model.default_loss();
    if loss == crate::models::LossKind::Bce && data.y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("classification needs binary {0, 1} targets".into()));
    }
    let train_cfg = cfg.train.apply(TrainConfig::default());
    let echo = cfg.resolved_echo();
    match csv.mode()? {
        CsvMode::Tasks(set) => run_task_set(cfg, csv, &data, set, &train_cfg, echo),
        CsvMode::BiasedResample { bias_column, alpha } => run_resample(cfg, csv, &data, &bias_column, alpha, &train_cfg, echo),
    }
}

fn run_task_set(
    cfg: &SuiteConfig,
    csv: &CsvTaskConfig,
    data: &Dataset,
    set: TaskSet,
    train_cfg: &TrainConfig,
    echo: serde_json::Value,
) -> Result<Vec<ExperimentReport>> {
    let env = data.env.as_ref().ok_or_else(|| Error::InvalidConfig("task sets need schema.env_column".into()))?;
    let full = data.env_data()?;
    let n_envs = data.env_labels.len();
    let by_env: Vec<EnvData> = (0..n_envs)
        .map(|e| full.select(&(0..full.len()).filter(|&i| env[i] == e).collect::<Vec<_>>()))
        .collect();
    let tasks = enumerate_tasks(n_envs, set)?;
    let decorr = cfg.decorr_base();
    let setting = match set {
        TaskSet::ThreeTrain => "three_train",
        TaskSet::OneTrain => "one_train",
    };
    let methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| {
            let ok = !(m.uses_true_envs() && set == TaskSet::OneTrain);
            if !ok {
                log::warn!("{m} skipped: the one-environment task set has no environments to compare");
            }
            ok
        })
        .collect();

    let per_task: Vec<BTreeMap<Method, f64>> = tasks
        .par_iter()
        .enumerate()
        .map(|(t, task)| {
            let seed = trial_seed(cfg.seed, setting, t);
            let raw_train: Vec<EnvData> = task.train.iter().map(|&e| by_env[e].clone()).collect();
            let raw_pooled = EnvData::pooled(&raw_train)?;
            let scaler = csv.schema.standardize.then(|| Scaler::fit(&raw_pooled.x));
            let scale = |d: &EnvData| scaler.as_ref().map_or_else(|| d.clone(), |s| s.apply(d));
            let train_envs: Vec<EnvData> = raw_train.iter().map(scale).collect();
            let pooled = scale(&raw_pooled);
            let val = scale(&by_env[task.validation]);
            let test = scale(&EnvData::pooled(&task.test.iter().map(|&e| by_env[e].clone()).collect::<Vec<_>>())?);
            methods
                .iter()
                .map(|&m| {
                    let model =
                        fit_method(m, &pooled, Some(&train_envs), csv.k, csv.model, csv.model.default_loss(), train_cfg, &decorr, Some(&val), seed)?;
                    Ok((m, prediction_error(&model, test.x.view(), test.y.view())?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    methods
        .iter()
        .map(|&m| {
            let errors: Vec<f64> = per_task.iter().map(|r| r[&m]).collect();
            let summary = task_set_summary(&errors)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("test_error".to_string(), errors);
            let mut report = ExperimentReport::from_trials(m.name(), setting, metrics, echo.clone())?;
            report.summary.insert("avg_error".into(), summary.avg);
            report.summary.insert("worst_error".into(), summary.worst);
            report.summary.insert("std_error".into(), summary.std);
            report.summary.insert("n_tasks".into(), tasks.len() as f64);
            Ok(report)
        })
        .collect()
}

fn run_resample(
    cfg: &SuiteConfig,
    csv: &CsvTaskConfig,
    data: &Dataset,
    bias_column: &str,
    alpha: f64,
    train_cfg: &TrainConfig,
    echo: serde_json::Value,
) -> Result<Vec<ExperimentReport>> {
    let bias = data
        .feature_names
        .iter()
        .position(|f| f == bias_column)
        .ok_or_else(|| Error::InvalidConfig(format!("bias column '{bias_column}' is not a feature")))?;
    let full = data.env_data()?;
    let decorr = cfg.decorr_base();
    let setting = format!("alpha={alpha}");

    let per_trial: Vec<BTreeMap<Method, f64>> = (0..cfg.trials())
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg.seed, &setting, t);
            let (train, test) = biased_resample(&full, bias, alpha, seed)?;
            // the biased feature decides the original environments
            let groups: Vec<Vec<usize>> =
                [0.0, 1.0].iter().map(|&b| (0..train.len()).filter(|&i| train.x[[i, bias]] == b).collect()).collect();
            let scaler = csv.schema.standardize.then(|| Scaler::fit(&train.x));
            let scale = |d: &EnvData| scaler.as_ref().map_or_else(|| d.clone(), |s| s.apply(d));
            let (train, test) = (scale(&train), scale(&test));
            let true_envs: Vec<EnvData> = groups.iter().filter(|g| !g.is_empty()).map(|g| train.select(g)).collect();
            cfg.methods
                .iter()
                .map(|&m| {
                    let model =
                        fit_method(m, &train, Some(&true_envs), csv.k, csv.model, csv.model.default_loss(), train_cfg, &decorr, None, seed)?;
                    Ok((m, prediction_error(&model, test.x.view(), test.y.view())?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    cfg.methods
        .iter()
        .map(|&m| {
            let mut metrics = BTreeMap::new();
            metrics.insert("test_error".to_string(), per_trial.iter().map(|r| r[&m]).collect());
            ExperimentReport::from_trials(m.name(), &setting, metrics, echo.clone())
        })
        .collect()
}
