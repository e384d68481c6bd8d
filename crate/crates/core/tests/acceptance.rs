//! Acceptance criteria runner. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=4,5` runs a subset. By default the process exits 0 once
//! every criterion has been evaluated and reported; set `ACCEPTANCE_STRICT=1`
//! to exit 1 when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use decorr_core::baselines::{eiil_partition, kmeans_partition, random_partition, EiilConfig};
use decorr_core::dataset::{CsvSchema, Dataset};
use decorr_core::datagen::{
    closed_form_corr, gen_biased_source, gen_irm_example, gen_sem, ClosedFormCorrTerms, IrmExampleConfig, MuEnvRule, SemConfig,
};
use decorr_core::decorr::{decorr_partition_detailed, optimize_weights};
use decorr_core::eval::ExperimentReport;
use decorr_core::experiments::{run_suite, CsvTaskConfig, Method, SuiteConfig, SuiteKind, TaskSet, TrainOverrides};
use decorr_core::models::{fit_erm, init_model, irmv1_penalty, EnvData, LossKind, ModelKind, Objective, TrainConfig};
use decorr_core::rng::{rng_from_seed, sub_seed};
use decorr_core::{DataMatrix, DecorrConfig, Partition};
use ndarray::Array1;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean_of(reports: &[ExperimentReport], setting: &str, method: Method, metric: &str) -> f64 {
    reports
        .iter()
        .find(|r| r.setting == setting && r.method == method.name())
        .and_then(|r| r.mean(metric))
        .unwrap_or_else(|| panic!("no {metric} for {method} in {setting}"))
}

fn irm_grid(dims: Vec<usize>, env_counts: Vec<usize>) -> (Vec<ExperimentReport>, Duration) {
    let cfg = SuiteConfig {
        methods: vec![Method::Erm, Method::IrmOracle, Method::RandomIrm, Method::DecorrIrm],
        trials: Some(5),
        dims: Some(dims),
        env_counts: Some(env_counts),
        ..SuiteConfig::new(SuiteKind::IrmExample)
    };
    let start = Instant::now();
    let reports = run_suite(&cfg).expect("irm_example suite");
    (reports, start.elapsed())
}

fn table1_cell() -> Outcome {
    let (reports, elapsed) = irm_grid(vec![2], vec![2]);
    let cell = "envs=2,d=2";
    let oracle = mean_of(&reports, cell, Method::IrmOracle, "coef_mse");
    let erm = mean_of(&reports, cell, Method::Erm, "coef_mse");
    let decorr = mean_of(&reports, cell, Method::DecorrIrm, "coef_mse");
    let pass = oracle <= 0.06 && (0.20..=0.36).contains(&erm) && decorr <= 0.22 && elapsed < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "oracle {oracle:.4} (<= 0.06), erm {erm:.4} (in [0.20, 0.36]), decorr+irm {decorr:.4} (<= 0.22), {:.0}s (< 600s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn table1_ordering() -> Outcome {
    let (reports, elapsed) = irm_grid(vec![2, 5, 10, 20], vec![2, 3]);
    let mut wins = 0;
    let mut cells = Vec::new();
    for envs in [2, 3] {
        for d in [2, 5, 10, 20] {
            let cell = format!("envs={envs},d={d}");
            let decorr = mean_of(&reports, &cell, Method::DecorrIrm, "coef_mse");
            let random = mean_of(&reports, &cell, Method::RandomIrm, "coef_mse");
            let won = decorr < random;
            wins += usize::from(won);
            cells.push(format!("{cell}: {decorr:.3} vs {random:.3}{}", if won { "" } else { " x" }));
        }
    }
    outcome(wins >= 7, format!("decorr < random in {wins}/8 cells (need 7) in {:.0}s [{}]", elapsed.as_secs_f64(), cells.join("; ")))
}

fn risks_directional() -> Outcome {
    let cfg = SuiteConfig {
        methods: vec![Method::Erm, Method::IrmOracle, Method::RandomIrm, Method::DecorrIrm],
        trials: Some(5),
        test_envs: Some(500),
        env_counts: Some((2..=8).collect()),
        ..SuiteConfig::new(SuiteKind::RisksOfIrm)
    };
    let start = Instant::now();
    let reports = run_suite(&cfg).expect("risks suite");
    let elapsed = start.elapsed();
    let worst = |e: usize, m: Method| mean_of(&reports, &format!("envs={e}"), m, "worst_case_error");
    let oracle_fails: Vec<usize> = (4..=8).filter(|&e| worst(e, Method::IrmOracle) >= worst(e, Method::Erm)).collect();
    let avg = |m: Method| (2..=8).map(|e| worst(e, m)).sum::<f64>() / 7.0;
    let (decorr, random) = (avg(Method::DecorrIrm), avg(Method::RandomIrm));
    let curve: Vec<String> = (2..=8)
        .map(|e| {
            format!(
                "E={e} erm {:.3} oracle {:.3} random {:.3} decorr {:.3}",
                worst(e, Method::Erm),
                worst(e, Method::IrmOracle),
                worst(e, Method::RandomIrm),
                worst(e, Method::DecorrIrm)
            )
        })
        .collect();
    let pass = oracle_fails.is_empty() && decorr <= random && elapsed < Duration::from_secs(1800);
    outcome(
        pass,
        format!(
            "oracle >= erm at E = {oracle_fails:?}; avg worst-case decorr {decorr:.4} vs random {random:.4}; {:.0}s (< 1800s) [{}]",
            elapsed.as_secs_f64(),
            curve.join("; ")
        ),
    )
}

fn gradient_oracles() -> Outcome {
    let mut rng = rng_from_seed(4);
    let mut decorr_worst = 0.0f64;
    for t in 0..50 {
        let (n, p) = (rng.random_range(8..60), rng.random_range(2..8));
        let x = correlated(n, p, rng.random_range(0.0..1.5), sub_seed(40, t));
        let w = Array1::from_shape_fn(n, |_| rng.random_range(0.1..=1.0));
        decorr_worst = decorr_worst.max(decorr_grad_error(x.view(), &w, 100.0, rng.random_range(0.2..1.0)));
    }
    let mut mlp_worst = 0.0f64;
    let objectives = [Objective::Erm, Objective::Irmv1, Objective::Vrex];
    for t in 0..50u64 {
        let (n, p) = (rng.random_range(20..60), rng.random_range(2..5));
        let x = gaussian(n, p, sub_seed(41, t));
        let loss = if t % 2 == 0 { LossKind::Bce } else { LossKind::Mse };
        let y = x.column(0).mapv(|v| if loss == LossKind::Bce { f64::from(u8::from(v > 0.0)) } else { v.sin() });
        let data = EnvData::new(x, y).unwrap();
        let envs = data.split(2, &(0..n).map(|i| i % 2).collect::<Vec<_>>()).unwrap();
        let model = init_model(ModelKind::Mlp, loss, p, t);
        mlp_worst = mlp_worst.max(model_grad_error(&model, &envs, objectives[t as usize % 3], 10.0, 1e-3));
    }
    outcome(
        decorr_worst < 1e-5 && mlp_worst < 1e-4,
        format!("decorr max rel err {decorr_worst:.2e} (< 1e-5), MLP max rel err {mlp_worst:.2e} (< 1e-4), 50 instances each"),
    )
}

fn brute_force_partition() -> Outcome {
    let mut within = 0;
    let mut ratios = Vec::new();
    for t in 0..20u64 {
        let x = correlated(10, 2, 1.0, sub_seed(50, t));
        let fit = optimize_weights(&DataMatrix::new(x.clone()).unwrap(), &DecorrConfig::with_k(2, t), 0.5).unwrap();
        let w = fit.weights.as_array();
        // keep the heaviest round(sum w) rows, the environment size the weights imply
        let m = (w.sum().round() as usize).clamp(3, 10);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
        let chosen = subset_dist(x.view(), &order[..m]);
        let best = brute_force_best(x.view(), m);
        if chosen <= 2.0 * best + 1e-12 {
            within += 1;
        }
        ratios.push(format!("{:.2}", chosen / best.max(1e-300)));
    }
    outcome(within >= 16, format!("{within}/20 within 2x of the best same-size subset (need 16); ratios [{}]", ratios.join(" ")))
}

fn stationarity() -> Outcome {
    let mut rng = rng_from_seed(6);
    let (mut ols_worst, mut logit_worst) = (0.0f64, 0.0f64);
    for t in 0..20u64 {
        let (n, p) = (rng.random_range(50..500), rng.random_range(1..6));
        let x = gaussian(n, p, sub_seed(60, t));
        let noise = gaussian(n, 1, sub_seed(61, t)).column(0).to_owned();
        let coef = Array1::from_shape_fn(p, |_| rng.random_range(-2.0..2.0));
        let y = x.dot(&coef) + &noise + rng.random_range(-1.0..1.0);
        let f = ols_fit(x.view(), y.view());
        ols_worst = ols_worst.max(irmv1_penalty(f.as_slice().unwrap(), y.as_slice().unwrap(), LossKind::Mse).unwrap());
        let labels = (x.dot(&coef) + &noise).mapv(|v| f64::from(u8::from(v > 0.0)));
        let f = logistic_mle(x.view(), labels.view());
        logit_worst = logit_worst.max(irmv1_penalty(f.as_slice().unwrap(), labels.as_slice().unwrap(), LossKind::Bce).unwrap());
    }
    outcome(
        ols_worst <= 1e-12 && logit_worst <= 1e-10,
        format!("max penalty at OLS optimum {ols_worst:.2e} (<= 1e-12), at logistic MLE {logit_worst:.2e} (<= 1e-10), 20 datasets"),
    )
}

fn closed_form_correlation() -> Outcome {
    let sigmas = [0.1, 1.5, 2.0];
    let terms = ClosedFormCorrTerms::identity(2);
    let mut worst = 0.0f64;
    let mut diag = Vec::new();
    for (e, &sigma) in sigmas.iter().enumerate() {
        let cfg = IrmExampleConfig { n_per_env: 100_000, ..IrmExampleConfig::new(2, vec![sigma], sub_seed(70, e as u64)) };
        let x = &gen_irm_example(&cfg).unwrap().envs[0].x;
        for i in 0..2 {
            for j in 0..2 {
                let mc = corr(x.column(i), x.column(2 + j));
                worst = worst.max((mc - closed_form_corr(&terms, sigma, i, j).unwrap()).abs());
            }
        }
        diag.push(corr(x.column(0), x.column(2)).abs());
    }
    let monotone = diag.windows(2).all(|w| w[0] < w[1]);
    outcome(
        worst <= 0.01 && monotone,
        format!("max |MC - closed form| {worst:.4} (<= 0.01); |corr| over sigma {:?}: {diag:.4?}", sigmas),
    )
}

fn zero_mean_lemma() -> Outcome {
    let n = 100_000;
    let mut cfg = SemConfig::risks_of_irm(1, n, 8);
    cfg.mu_e_rule = MuEnvRule::Fixed(vec![0.0; cfg.d_e]);
    let (envs, _) = gen_sem(&cfg).unwrap();
    let x = &envs[0].x;
    let mut worst = 0.0f64;
    for c in 0..cfg.d_c {
        for e in 0..cfg.d_e {
            worst = worst.max(corr(x.column(c), x.column(cfg.d_c + e)).abs());
        }
    }
    let bound = 3.0 / (n as f64).sqrt();
    outcome(worst < bound, format!("max |corr(z_c, z_e)| {worst:.5} (< {bound:.5}) over {} pairs", cfg.d_c * cfg.d_e))
}

fn cover_ok(part: &Partition, n: usize, k: usize) -> bool {
    part.validate().is_ok() && part.n() == n && part.k == k && part.sizes().iter().sum::<usize>() == n
}

fn partition_invariants() -> Outcome {
    let mut rng = rng_from_seed(9);
    let mut failures = Vec::new();
    for t in 0..100u64 {
        let (n, p, k) = (rng.random_range(20..100), rng.random_range(2..6), rng.random_range(2..5));
        let seed = rng.random::<u64>();
        let x = correlated(n, p, rng.random_range(0.0..2.0), seed);
        let data = DataMatrix::new(x.clone()).unwrap();
        let mut check = |name: &str, ok: bool| {
            if !ok {
                failures.push(format!("config {t} {name}"));
            }
        };

        let a = random_partition(n, k, seed).unwrap();
        check("random", cover_ok(&a, n, k) && a == random_partition(n, k, seed).unwrap());

        let a = kmeans_partition(&data, k, seed).unwrap();
        check("kmeans", cover_ok(&a, n, k) && a == kmeans_partition(&data, k, seed).unwrap());

        let cfg = DecorrConfig::with_k(k, seed);
        let run = decorr_partition_detailed(&data, &cfg).unwrap();
        let bounded = run.rounds.iter().all(|f| f.min_weight_seen >= cfg.p0 && f.max_weight_seen <= 1.0);
        check("decorr", cover_ok(&run.partition, n, k) && bounded && run.partition == decorr_partition_detailed(&data, &cfg).unwrap().partition);

        let y = x.column(0).mapv(|v| f64::from(u8::from(v > 0.0)));
        let pooled = EnvData::new(x.clone(), y.clone()).unwrap();
        let reference = fit_erm(
            &[pooled],
            ModelKind::Logistic,
            LossKind::Bce,
            &TrainConfig { lr: 0.05, n_iter: 500, dropout_p: 0.0, ..TrainConfig::default() },
        )
        .unwrap();
        let ecfg = EiilConfig { seed, ..EiilConfig::default() };
        let a = eiil_partition(&data, y.view(), &ecfg, &reference).unwrap();
        check("eiil", cover_ok(&a, n, 2) && a == eiil_partition(&data, y.view(), &ecfg, &reference).unwrap());
    }
    outcome(failures.is_empty(), format!("100 configs x 4 partitioners; violations: {failures:?}"))
}

fn tabular_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (envs, _) = gen_sem(&SemConfig::risks_of_irm(5, 300, 10)).unwrap();
    let five = dir.path().join("five_envs.csv");
    Dataset::from_envs(&envs, None).unwrap().write_csv(&five).unwrap();
    let schema = CsvSchema { env_column: Some("env".into()), ..CsvSchema::new("target") };

    let mut task_counts = BTreeMap::new();
    for set in [TaskSet::ThreeTrain, TaskSet::OneTrain] {
        let cfg = SuiteConfig {
            methods: vec![Method::Erm, Method::RandomIrm, Method::DecorrIrm, Method::IrmOracle],
            train: TrainOverrides { n_iter: Some(2000), ..TrainOverrides::default() },
            csv: Some(CsvTaskConfig {
                input: five.clone(),
                schema: schema.clone(),
                task_set: set,
                bias_column: None,
                alpha: None,
                model: ModelKind::Logistic,
                k: 2,
            }),
            ..SuiteConfig::new(SuiteKind::CsvTasks)
        };
        let reports = run_suite(&cfg).expect("task-set run");
        let counts: Vec<f64> = reports.iter().map(|r| r.summary["n_tasks"]).collect();
        task_counts.insert(format!("{set:?}"), counts);
    }
    let tasks_ok = task_counts.values().all(|c| !c.is_empty() && c.iter().all(|&n| n == 20.0));

    let source = gen_biased_source(10_000, 4, 11).unwrap();
    let names = std::iter::once("bias".to_string()).chain((0..4).map(|j| format!("x{j}"))).collect();
    let mut ds = Dataset::from_envs(&[source], Some(names)).unwrap();
    ds.env = None;
    let biased = dir.path().join("biased.csv");
    ds.write_csv(&biased).unwrap();
    // same optimizer setting as the synthetic classification suite
    let cfg = SuiteConfig {
        methods: Method::ALL.to_vec(),
        trials: Some(5),
        train: TrainOverrides { lr: Some(0.01), n_iter: Some(5000), ..TrainOverrides::default() },
        csv: Some(CsvTaskConfig {
            input: biased,
            schema: CsvSchema::new("target"),
            task_set: TaskSet::ThreeTrain,
            bias_column: Some("bias".into()),
            alpha: Some(0.9),
            model: ModelKind::Logistic,
            k: 2,
        }),
        ..SuiteConfig::new(SuiteKind::CsvTasks)
    };
    let reports = run_suite(&cfg).expect("resample run");
    let erm = mean_of(&reports, "alpha=0.9", Method::Erm, "test_error");
    let gaps: Vec<(Method, f64)> = Method::ALL
        .iter()
        .filter(|&&m| m != Method::Erm)
        .map(|&m| (m, 100.0 * (mean_of(&reports, "alpha=0.9", m, "test_error") - erm).abs()))
        .collect();
    let gaps_ok = gaps.iter().all(|&(_, g)| g < 2.0);
    let gap_text: Vec<String> = gaps.iter().map(|(m, g)| format!("{m} {g:.2}")).collect();
    outcome(
        tasks_ok && gaps_ok,
        format!("tasks per method {task_counts:?} (need 20); alpha=0.9 gaps vs erm {erm:.4} in points [{}] (< 2)", gap_text.join(", ")),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "regression example cell (2 envs, d = 2)", table1_cell),
        (2, "regression example ordering vs random partitions", table1_ordering),
        (3, "worst-case error orderings over training-environment counts", risks_directional),
        (4, "gradient oracles", gradient_oracles),
        (5, "brute-force partition oracle", brute_force_partition),
        (6, "IRMv1 stationarity identity", stationarity),
        (7, "closed-form correlation", closed_form_correlation),
        (8, "zero environmental mean decorrelates features", zero_mean_lemma),
        (9, "partition invariants", partition_invariants),
        (10, "tabular pipeline on synthetic CSVs", tabular_pipeline),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v != "0");

    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        ran += 1;
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {} ({:.1}s)", out.detail, start.elapsed().as_secs_f64());
        if !out.pass {
            failed.push(id);
        }
    }
    println!("acceptance: {}/{ran} criteria passed; failed: {failed:?}", ran - failed.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
