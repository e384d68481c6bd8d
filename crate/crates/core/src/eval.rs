//! Metrics and report assembly.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SemTestFactory;
use crate::error::{Error, Result};
use crate::models::{prediction_error, LossKind, ModelParams};
use crate::rng::sub_seed;

/// Mean squared difference between fitted and true coefficients.
pub fn coef_mse(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() || fitted.is_empty() {
        return Err(Error::Dimension(format!("{} fitted vs {} true coefficients", fitted.len(), truth.len())));
    }
    Ok(fitted.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / fitted.len() as f64)
}

/// 0-1 error on each of `n_envs` fresh test environments. Environment `i`
/// comes from sub-seed `i` of `seed`, so results do not depend on scheduling.
pub fn test_env_errors(model: &ModelParams, factory: &SemTestFactory, n_envs: usize, seed: u64) -> Result<Vec<f64>> {
    if model.loss != LossKind::Bce {
        return Err(Error::Unsupported("worst-case error needs a classification model".into()));
    }
    if n_envs < 1 {
        return Err(Error::InvalidConfig("n_envs must be >= 1".into()));
    }
    (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let env = factory.environment(sub_seed(seed, i as u64))?;
            prediction_error(model, env.x.view(), env.y.view())
        })
        .collect()
}

/// Largest 0-1 error over `n_envs` fresh test environments.
pub fn worst_case_error(model: &ModelParams, factory: &SemTestFactory, n_envs: usize, seed: u64) -> Result<f64> {
    Ok(test_env_errors(model, factory, n_envs, seed)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSetSummary {
    pub avg: f64,
    pub worst: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn task_set_summary(errors: &[f64]) -> Result<TaskSetSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("task set summary of an empty list".into()));
    }
    let n = errors.len() as f64;
    let avg = errors.iter().sum::<f64>() / n;
    let worst = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std = (errors.iter().map(|e| (e - avg) * (e - avg)).sum::<f64>() / n).sqrt();
    Ok(TaskSetSummary { avg, worst, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation; absent with fewer than two trials.
    pub std: Option<f64>,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt());
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    /// Grid cell or task-set label, e.g. `envs=2,d=5`.
    pub setting: String,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub n_trials: usize,
    pub per_trial: BTreeMap<String, Vec<f64>>,
    /// Scalar summaries that are not per-trial means, e.g. task-set statistics.
    #[serde(default)]
    pub summary: BTreeMap<String, f64>,
    pub config_echo: serde_json::Value,
}

impl ExperimentReport {
    pub fn from_trials(
        method: impl Into<String>,
        setting: impl Into<String>,
        per_trial: BTreeMap<String, Vec<f64>>,
        config_echo: serde_json::Value,
    ) -> Result<Self> {
        let n_trials = per_trial.values().map(Vec::len).next().unwrap_or(0);
        if n_trials == 0 || per_trial.values().any(|v| v.len() != n_trials) {
            return Err(Error::InvalidInput("every metric needs the same non-zero number of trials".into()));
        }
        let metrics = per_trial.iter().map(|(k, v)| (k.clone(), MetricSummary::of(v))).collect();
        Ok(Self { method: method.into(), setting: setting.into(), metrics, n_trials, per_trial, summary: BTreeMap::new(), config_echo })
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.mean)
    }
}

pub fn write_reports_json(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

/// One row per (setting, method, metric).
pub fn write_reports_csv(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["setting", "method", "metric", "mean", "std", "n_trials"])?;
    for r in reports {
        for (metric, s) in &r.metrics {
            w.write_record([
                r.setting.clone(),
                r.method.clone(),
                metric.clone(),
                s.mean.to_string(),
                s.std.map(|v| v.to_string()).unwrap_or_default(),
                r.n_trials.to_string(),
            ])?;
        }
        for (name, v) in &r.summary {
            w.write_record([r.setting.clone(), r.method.clone(), name.clone(), v.to_string(), String::new(), r.n_trials.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table of metric means (and stds) for terminal output.
pub fn summary_table(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{:<16} {:<14} {:<22} {:>10} {:>10}\n", "setting", "method", "metric", "mean", "std");
    for r in reports {
        for (metric, s) in &r.metrics {
            let std = s.std.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{:<16} {:<14} {:<22} {:>10.4} {:>10}\n", r.setting, r.method, metric, s.mean, std));
        }
        for (name, v) in &r.summary {
            out.push_str(&format!("{:<16} {:<14} {:<22} {:>10.4} {:>10}\n", r.setting, r.method, name, v, "-"));
        }
    }
    out
}
