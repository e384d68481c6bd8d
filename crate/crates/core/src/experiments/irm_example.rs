use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{fit_method, trial_seed, Method, SuiteConfig};
use crate::datagen::{gen_irm_example, IrmExampleConfig};
use crate::error::{Error, Result};
use crate::eval::{coef_mse, ExperimentReport};
use crate::models::{EnvData, LossKind, ModelKind, TrainConfig};
use crate::rng::labeled_seed;

pub(crate) const DEFAULT_DIMS: [usize; 4] = [2, 5, 10, 20];
pub(crate) const DEFAULT_ENV_COUNTS: [usize; 2] = [2, 3];
const SIGMAS: [f64; 3] = [0.1, 1.5, 2.0];

/// Linear regression on the causal/anti-causal example: for each
/// `(env count, d)` cell, method and trial, the MSE between fitted and true
/// coefficients. Non-oracle methods partition the pooled data into as many
/// environments as were generated.
pub fn run_irm_example_suite(cfg: &SuiteConfig) -> Result<Vec<ExperimentReport>> {
    let dims = cfg.dims.clone().unwrap_or_else(|| DEFAULT_DIMS.to_vec());
    let env_counts = cfg.env_counts.clone().unwrap_or_else(|| DEFAULT_ENV_COUNTS.to_vec());
    if let Some(e) = env_counts.iter().find(|&&e| e < 1 || e > SIGMAS.len()) {
        return Err(Error::InvalidConfig(format!("env count {e} outside 1..={}", SIGMAS.len())));
    }
    let train_cfg = cfg.train.apply(TrainConfig { beta: 10.0, dropout_p: 0.0, ..TrainConfig::default() });
    let decorr = cfg.decorr_base();
    let echo = cfg.resolved_echo();

    let mut reports = Vec::new();
    for &n_envs in &env_counts {
        for &d in &dims {
            let cell = format!("envs={n_envs},d={d}");
            let per_trial: Vec<BTreeMap<Method, f64>> = (0..cfg.trials())
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(cfg.seed, &cell, t);
                    let data_cfg = IrmExampleConfig {
                        n_per_env: cfg.n_per_env,
                        ..IrmExampleConfig::new(d, SIGMAS[..n_envs].to_vec(), labeled_seed(seed, "data"))
                    };
                    let ex = gen_irm_example(&data_cfg)?;
                    let pooled = EnvData::pooled(&ex.envs)?;
                    let truth = ex.beta_star.to_vec();
                    cfg.methods
                        .iter()
                        .map(|&m| {
                            let model = fit_method(
                                m,
                                &pooled,
                                Some(&ex.envs),
                                n_envs,
                                ModelKind::Linear,
                                LossKind::Mse,
                                &train_cfg,
                                &decorr,
                                None,
                                seed,
                            )?;
                            let coefs = model.coefficients().expect("linear model");
                            Ok((m, coef_mse(coefs, &truth)?))
                        })
                        .collect::<Result<BTreeMap<_, _>>>()
                })
                .collect::<Result<_>>()?;
            for &m in &cfg.methods {
                let mut metrics = BTreeMap::new();
                metrics.insert("coef_mse".to_string(), per_trial.iter().map(|r| r[&m]).collect());
                reports.push(ExperimentReport::from_trials(m.name(), &cell, metrics, echo.clone())?);
            }
            log::info!("irm_example {cell} done");
        }
    }
    Ok(reports)
}
