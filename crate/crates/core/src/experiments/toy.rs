use std::collections::BTreeMap;

use super::{erm_reference, method_partition, trial_seed, Method, SuiteConfig};
use crate::datagen::gen_toy_2d;
use crate::error::Result;
use crate::eval::ExperimentReport;
use crate::models::{LossKind, ModelKind, TrainConfig};
use crate::numerics::pearson_correlation;
use crate::partition::Partition;
use crate::rng::labeled_seed;

/// Partitions the correlated two-dimensional toy set into two environments
/// with every partitioning method and writes `toy_<method>.csv` with columns
/// `x0, x1, env_id` (first trial only). Reports the within-environment
/// correlations and their gap across trials.
pub fn run_toy_dump(cfg: &SuiteConfig) -> Result<Vec<ExperimentReport>> {
    let methods: Vec<Method> = cfg.methods.iter().copied().filter(|m| !matches!(m, Method::Erm | Method::IrmOracle | Method::Vrex)).collect();
    let decorr = cfg.decorr_base();
    let echo = cfg.resolved_echo();
    std::fs::create_dir_all(&cfg.output)?;

    let mut per_method: BTreeMap<Method, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for t in 0..cfg.trials() {
        let seed = trial_seed(cfg.seed, "toy", t);
        let data = gen_toy_2d(cfg.toy_n, labeled_seed(seed, "data"))?;
        let reference = erm_reference(&data, ModelKind::Linear, LossKind::Mse, &TrainConfig::default())?;
        for &m in &methods {
            let part = method_partition(m, &data, 2, &decorr, Some(&reference), seed)?.expect("partitioning method");
            if t == 0 {
                write_scatter(&cfg.output.join(format!("toy_{}.csv", short_name(m))), &data.x, &part)?;
            }
            let corr: Vec<f64> = part
                .groups()
                .iter()
                .map(|g| pearson_correlation(data.x.select(ndarray::Axis(0), g).view()).map(|r| r.get(0, 1)).unwrap_or(f64::NAN))
                .collect();
            let entry = per_method.entry(m).or_default();
            entry.entry("corr_env0".into()).or_default().push(corr[0]);
            entry.entry("corr_env1".into()).or_default().push(corr[1]);
            entry.entry("corr_gap".into()).or_default().push((corr[0] - corr[1]).abs());
        }
    }
    per_method
        .into_iter()
        .map(|(m, metrics)| ExperimentReport::from_trials(m.name(), "toy", metrics, echo.clone()))
        .collect()
}

fn short_name(m: Method) -> &'static str {
    m.name().split('+').next().unwrap_or(m.name())
}

fn write_scatter(path: &std::path::Path, x: &ndarray::Array2<f64>, part: &Partition) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "x1", "env_id"])?;
    for (row, env) in x.rows().into_iter().zip(&part.assignments) {
        w.write_record([row[0].to_string(), row[1].to_string(), env.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
