use std::path::{Path, PathBuf};

use decorr_core::baselines::{eiil_partition, kmeans_detailed, random_partition, EiilConfig, KMeansConfig};
use decorr_core::dataset::{CsvSchema, Dataset};
use decorr_core::datagen::{gen_biased_source, gen_irm_example, gen_sem, gen_toy_2d, IrmExampleConfig, SemConfig};
use decorr_core::eval::summary_table;
use decorr_core::experiments::{erm_reference, run_suite, write_suite_outputs, SuiteConfig};
use decorr_core::models::{prediction_error, train as train_model, Objective};
use decorr_core::numerics::column_mean_sd;
use decorr_core::partition::diagnostics;
use decorr_core::{decorr_partition, DecorrConfig, Error, LossKind, ModelKind, Partition, Result, TrainConfig};
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::{DataArgs, GenerateArgs, GenerateKind, Learner, ModelArg, PartitionArgs, PartitionMethod, SuiteArgs, TrainArgs};

/// `dir/stem.<suffix>.json` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(std::fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn schema(args: &DataArgs) -> Result<CsvSchema> {
    let mut schema = match (&args.schema, &args.target) {
        (Some(path), _) => CsvSchema::read(path)?,
        (None, Some(t)) => CsvSchema { env_column: args.env_column.clone(), ..CsvSchema::new(t.clone()) },
        (None, None) => CsvSchema { env_column: args.env_column.clone(), ..CsvSchema::new("target") },
    };
    if args.standardize {
        schema.standardize = true;
    }
    if args.no_standardize {
        schema.standardize = false;
    }
    Ok(schema)
}

fn is_binary(y: &Array1<f64>) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0)
}

#[derive(Serialize)]
struct PartitionReport<'a> {
    method: &'a str,
    k: usize,
    n: usize,
    seed: u64,
    standardize: bool,
    environments: Vec<decorr_core::partition::EnvironmentDiagnostics>,
}

pub fn partition(args: &PartitionArgs, seed: u64) -> Result<()> {
    let schema = schema(&args.data)?;
    let data = Dataset::read_csv(&args.data.input, &schema)?;
    let n = data.n();
    if args.k < 1 || n < 2 * args.k {
        return Err(Error::InvalidConfig(format!("{} rows cannot fill k = {} environments of at least two rows", n, args.k)));
    }
    let x = data.features()?;
    let (name, part) = match args.method {
        PartitionMethod::Decorr => {
            let mut cfg = DecorrConfig { k: args.k, seed, standardize: schema.standardize, ..DecorrConfig::default() };
            if let Some(v) = args.p0 {
                cfg.p0 = v;
            }
            if let Some(v) = args.alpha {
                cfg.alpha = v;
            }
            if let Some(v) = args.iters {
                cfg.max_iters = v;
            }
            if let Some(v) = args.lambda {
                cfg.lambda = v;
            }
            cfg.validate()?;
            ("decorr", decorr_partition(&x, &cfg)?)
        }
        PartitionMethod::Kmeans => {
            let mut cfg = KMeansConfig { k: args.k, seed, ..KMeansConfig::default() };
            if let Some(v) = args.iters {
                cfg.max_iters = v;
            }
            ("kmeans", kmeans_detailed(&x, &cfg)?.partition)
        }
        PartitionMethod::Random => ("random", random_partition(n, args.k, seed)?),
        PartitionMethod::Eiil => {
            let pooled = data.env_data()?;
            let (kind, loss) = if is_binary(&pooled.y) {
                (ModelKind::Logistic, LossKind::Bce)
            } else {
                (ModelKind::Linear, LossKind::Mse)
            };
            let ref_cfg = TrainConfig { lr: 0.01, n_iter: 5000, dropout_p: 0.0, seed, ..TrainConfig::default() };
            let reference = erm_reference(&pooled, kind, loss, &ref_cfg)?;
            let mut cfg = EiilConfig { seed, ..EiilConfig::default() };
            if let Some(v) = args.iters {
                cfg.steps = v;
            }
            if args.k != 2 {
                return Err(Error::InvalidConfig(format!("EIIL infers exactly two environments, got k = {}", args.k)));
            }
            ("eiil", eiil_partition(&x, pooled.y.view(), &cfg, &reference)?)
        }
    };
    let diag = diagnostics(data.x.view(), &part)?;

    ensure_parent(&args.output)?;
    part.write_json(&args.output)?;
    let diag_path = sibling(&args.output, "diagnostics");
    write_json(
        &diag_path,
        &PartitionReport { method: name, k: part.k, n, seed, standardize: schema.standardize, environments: diag.clone() },
    )?;

    println!("{:<6} {:>8} {:>12}", "env", "size", "d2(R,I)");
    for d in &diag {
        let dist = d.dist_sq.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        println!("{:<6} {:>8} {:>12}", d.env, d.size, dist);
    }
    log::info!("wrote {} and {}", args.output.display(), diag_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EnvMetric {
    env: usize,
    size: usize,
    error: f64,
}

#[derive(Serialize)]
struct TrainReport {
    learner: &'static str,
    model: ModelKind,
    loss: LossKind,
    seed: u64,
    /// "0-1 error" for classifiers, "mse" for regressors.
    error_kind: &'static str,
    train_error: f64,
    environments: Vec<EnvMetric>,
    validation_error: Option<f64>,
    iterations: usize,
    best_iteration: Option<usize>,
    final_objective: f64,
    /// Training statistics the model inputs were standardized with, if any.
    feature_mean: Option<Vec<f64>>,
    feature_sd: Option<Vec<f64>>,
}

fn scale(x: &mut Array2<f64>, mean: &[f64], sd: &[f64]) {
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        let s = if sd[j] > 0.0 { sd[j] } else { 1.0 };
        col.mapv_inplace(|v| (v - mean[j]) / s);
    }
}

pub fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let schema = schema(&args.data)?;
    let raw = CsvSchema { standardize: false, ..schema.clone() };
    let mut data = Dataset::read_csv(&args.data.input, &raw)?;
    let part = match &args.partition {
        Some(path) => {
            let p = Partition::read_json(path)?;
            if p.n() != data.n() {
                return Err(Error::Dimension(format!(
                    "partition {} covers {} rows but {} has {}",
                    path.display(),
                    p.n(),
                    args.data.input.display(),
                    data.n()
                )));
            }
            p
        }
        None => data.env_partition(seed)?.unwrap_or_else(|| Partition::single(data.n(), seed)),
    };

    let (mean, sd) = column_mean_sd(data.x.view());
    let (mean, sd) = (mean.to_vec(), sd.to_vec());
    if schema.standardize {
        scale(&mut data.x, &mean, &sd);
    }
    let binary = is_binary(&data.y);
    let kind = match args.model {
        Some(ModelArg::Linear) => ModelKind::Linear,
        Some(ModelArg::Logistic) => ModelKind::Logistic,
        Some(ModelArg::Mlp) => ModelKind::Mlp,
        None if binary => ModelKind::Logistic,
        None => ModelKind::Linear,
    };
    let loss = if kind == ModelKind::Linear || (kind == ModelKind::Mlp && !binary) { LossKind::Mse } else { LossKind::Bce };
    if loss == LossKind::Bce && !binary {
        return Err(Error::InvalidInput("classification needs {0, 1} targets".into()));
    }

    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.iters {
        cfg.n_iter = v;
    }
    if let Some(v) = args.l2 {
        cfg.l2 = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout_p = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup = v;
    }
    cfg.validate()?;

    let validation = match &args.validation {
        Some(path) => {
            let mut v = Dataset::read_csv(path, &raw)?;
            if v.x.ncols() != data.x.ncols() {
                return Err(Error::Dimension(format!("validation has {} features, training {}", v.x.ncols(), data.x.ncols())));
            }
            if schema.standardize {
                scale(&mut v.x, &mean, &sd);
            }
            Some(v.env_data()?)
        }
        None => None,
    };

    let pooled = data.env_data()?;
    let envs = pooled.split(part.k, &part.assignments)?;
    let (learner, objective) = match args.learner {
        Learner::Erm => ("erm", Objective::Erm),
        Learner::Irmv1 => ("irmv1", Objective::Irmv1),
        Learner::Vrex => ("vrex", Objective::Vrex),
    };
    if args.learner != Learner::Erm && envs.len() < 2 {
        log::warn!("{learner} with a single environment: the invariance term cannot compare environments");
    }
    let model = if args.learner == Learner::Erm && kind == ModelKind::Linear && validation.is_none() {
        let cfg = TrainConfig { closed_form: true, ..cfg };
        train_model(std::slice::from_ref(&pooled), kind, loss, Objective::Erm, &cfg, None)?
    } else if args.learner == Learner::Erm {
        train_model(std::slice::from_ref(&pooled), kind, loss, objective, &cfg, validation.as_ref())?
    } else {
        train_model(&envs, kind, loss, objective, &cfg, validation.as_ref())?
    };

    let environments = envs
        .iter()
        .enumerate()
        .map(|(env, d)| Ok(EnvMetric { env, size: d.len(), error: prediction_error(&model, d.x.view(), d.y.view())? }))
        .collect::<Result<Vec<_>>>()?;
    let validation_error = validation.as_ref().map(|v| prediction_error(&model, v.x.view(), v.y.view())).transpose()?;
    let report = TrainReport {
        learner,
        model: kind,
        loss,
        seed,
        error_kind: if loss == LossKind::Bce { "0-1 error" } else { "mse" },
        train_error: prediction_error(&model, pooled.x.view(), pooled.y.view())?,
        environments,
        validation_error,
        iterations: model.telemetry.iterations,
        best_iteration: model.telemetry.best_iteration,
        final_objective: model.telemetry.final_objective,
        feature_mean: schema.standardize.then(|| mean.clone()),
        feature_sd: schema.standardize.then(|| sd.clone()),
    };

    ensure_parent(&args.output)?;
    std::fs::write(&args.output, model.to_json()? + "\n")?;
    let metrics_path = sibling(&args.output, "metrics");
    write_json(&metrics_path, &report)?;

    println!("{learner} {kind:?} on {} environment(s): train {} {:.6}", envs.len(), report.error_kind, report.train_error);
    for e in &report.environments {
        println!("  env {:<4} n = {:<8} {:.6}", e.env, e.size, e.error);
    }
    if let Some(v) = validation_error {
        println!("  validation {v:.6}");
    }
    Ok(())
}

pub fn suite(args: &SuiteArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = SuiteConfig::read(&args.config)?;
    match seed {
        Some(s) => cfg.seed = s,
        None => log::info!("using the config seed {}", cfg.seed),
    }
    if let Some(out) = &args.output {
        cfg.output = out.clone();
    }
    if args.full_scale {
        cfg.full_scale = true;
    }
    let reports = run_suite(&cfg)?;
    let (json, csv) = write_suite_outputs(&cfg, &reports)?;
    print!("{}", summary_table(&reports));
    log::info!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

pub fn generate(args: &GenerateArgs, seed: u64) -> Result<()> {
    let dataset = match args.kind {
        GenerateKind::Toy => {
            let d = gen_toy_2d(args.n, seed)?;
            Dataset::from_envs(&[d], None).map(|mut ds| {
                ds.env = None;
                ds.env_labels.clear();
                ds
            })?
        }
        GenerateKind::IrmExample => {
            const SIGMAS: [f64; 3] = [0.1, 1.5, 2.0];
            if !(1..=SIGMAS.len()).contains(&args.envs) {
                return Err(Error::InvalidConfig(format!("irm-example supports 1 to 3 environments, got {}", args.envs)));
            }
            let cfg = IrmExampleConfig { n_per_env: args.n, ..IrmExampleConfig::new(args.d, SIGMAS[..args.envs].to_vec(), seed) };
            let ex = gen_irm_example(&cfg)?;
            Dataset::from_envs(&ex.envs, None)?
        }
        GenerateKind::Risks => {
            let (envs, _) = gen_sem(&SemConfig::risks_of_irm(args.envs, args.n, seed))?;
            Dataset::from_envs(&envs, None)?
        }
        GenerateKind::Biased => {
            let d = gen_biased_source(args.n, args.d, seed)?;
            let names = std::iter::once("bias".to_string()).chain((0..args.d).map(|j| format!("x{j}"))).collect();
            let mut ds = Dataset::from_envs(&[d], Some(names))?;
            ds.env = None;
            ds.env_labels.clear();
            ds
        }
    };
    ensure_parent(&args.output)?;
    dataset.write_csv(&args.output)?;
    log::info!("wrote {} rows to {}", dataset.n(), args.output.display());
    Ok(())
}
