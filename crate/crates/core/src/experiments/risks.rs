use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{fit_method, trial_seed, Method, SuiteConfig};
use crate::datagen::{gen_sem, SemConfig};
use crate::error::{Error, Result};
use crate::eval::{test_env_errors, ExperimentReport};
use crate::models::{EnvData, LossKind, ModelKind, TrainConfig};
use crate::rng::labeled_seed;

pub(crate) const DEFAULT_ENV_COUNTS: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];

/// Logistic classifiers on the label-first structural model. For each
/// training-environment count, method and trial: worst-case and mean 0-1
/// error over freshly generated test environments.
pub fn run_risks_suite(cfg: &SuiteConfig) -> Result<Vec<ExperimentReport>> {
    let env_counts = cfg.env_counts.clone().unwrap_or_else(|| DEFAULT_ENV_COUNTS.to_vec());
    if env_counts.iter().any(|&e| e < 1) {
        return Err(Error::InvalidConfig("env counts must be >= 1".into()));
    }
    // Zero-initialized logistic models barely move in a 100-step warmup at
    // lr 1e-3, after which the penalty pins them at the trivial predictor.
    let train_cfg = cfg.train.apply(TrainConfig { beta: 1e4, lr: 0.01, n_iter: 5000, dropout_p: 0.0, ..TrainConfig::default() });
    let decorr = cfg.decorr_base();
    let echo = cfg.resolved_echo();
    let n_test = cfg.test_envs();

    let mut reports = Vec::new();
    for &e in &env_counts {
        let cell = format!("envs={e}");
        let per_trial: Vec<BTreeMap<Method, (f64, f64)>> = (0..cfg.trials())
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(cfg.seed, &cell, t);
                let sem = SemConfig::risks_of_irm(e, cfg.n_per_env, labeled_seed(seed, "data"));
                let (envs, factory) = gen_sem(&sem)?;
                let pooled = EnvData::pooled(&envs)?;
                let test_seed = labeled_seed(seed, "test-envs");
                cfg.methods
                    .iter()
                    .filter(|&&m| !(m == Method::Vrex && e < 2))
                    .map(|&m| {
                        let model = fit_method(
                            m,
                            &pooled,
                            Some(&envs),
                            e,
                            ModelKind::Logistic,
                            LossKind::Bce,
                            &train_cfg,
                            &decorr,
                            None,
                            seed,
                        )?;
                        let errs = test_env_errors(&model, &factory, n_test, test_seed)?;
                        let worst = errs.iter().copied().fold(0.0, f64::max);
                        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
                        Ok((m, (worst, mean)))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<_>>()?;
        for &m in &cfg.methods {
            if !per_trial[0].contains_key(&m) {
                log::warn!("{m} skipped for {cell}: needs at least two environments");
                continue;
            }
            let mut metrics = BTreeMap::new();
            metrics.insert("worst_case_error".to_string(), per_trial.iter().map(|r| r[&m].0).collect());
            metrics.insert("mean_test_error".to_string(), per_trial.iter().map(|r| r[&m].1).collect());
            reports.push(ExperimentReport::from_trials(m.name(), &cell, metrics, echo.clone())?);
        }
        log::info!("risks_of_irm {cell} done");
    }
    Ok(reports)
}
