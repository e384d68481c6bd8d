use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn decorr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decorr")).current_dir(dir).args(args).output().expect("spawn decorr")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn toy_csv(dir: &Path) {
    let o = decorr(dir, &["--seed", "5", "generate", "--kind", "toy", "--n", "300", "--output", "toy.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn decorr_partition_of_toy_set_splits_correlation_structure() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    let run = |out: &str| decorr(dir.path(), &["--seed", "9", "partition", "--input", "toy.csv", "--method", "decorr", "--k", "2", "--output", out]);
    let o = run("a.json");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run("b.json").status.success());
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap(), "same seed, different bytes");

    let diag = read_json(&dir.path().join("a.diagnostics.json"));
    let envs = diag["environments"].as_array().unwrap();
    assert_eq!(envs.len(), 2);
    let corr: Vec<f64> = envs.iter().map(|e| e["correlation"][0][1].as_f64().unwrap()).collect();
    assert!((corr[0] - corr[1]).abs() > 0.2, "{corr:?}");
    let sizes: u64 = envs.iter().map(|e| e["size"].as_u64().unwrap()).sum();
    assert_eq!(sizes, 300);
}

#[test]
fn partition_size_guard_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    let o = decorr(dir.path(), &["--seed", "1", "partition", "--input", "toy.csv", "--method", "random", "--k", "300", "--output", "p.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k = 300"), "{}", stderr(&o));
}

#[test]
fn every_partitioner_covers_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    for method in ["random", "kmeans", "eiil", "decorr"] {
        let out = format!("{method}.json");
        let o = decorr(dir.path(), &["--seed", "2", "partition", "--input", "toy.csv", "--method", method, "--iters", "300", "--output", &out]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        let p = read_json(&dir.path().join(&out));
        let a = p["assignments"].as_array().unwrap();
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|e| e.as_u64().unwrap() < 2));
    }
}

#[test]
fn erm_fits_noiseless_linear_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,y\n");
    for i in 0..50 {
        let (a, b) = (i as f64 * 0.1, ((i * 7) % 11) as f64);
        csv.push_str(&format!("{a},{b},{}\n", 2.0 * a - b + 0.5));
    }
    std::fs::write(dir.path().join("lin.csv"), csv).unwrap();
    let o = decorr(dir.path(), &["--seed", "0", "train", "--input", "lin.csv", "--target", "y", "--learner", "erm", "--output", "m.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&dir.path().join("m.metrics.json"));
    assert!(m["train_error"].as_f64().unwrap() < 1e-3, "{m}");
    assert!(dir.path().join("m.json").exists());
}

#[test]
fn irmv1_on_one_environment_warns_and_trains() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    let args = ["--seed", "4", "train", "--input", "toy.csv", "--learner", "irmv1", "--iters", "200", "--output", "m.json"];
    let o = decorr(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("single environment"), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("m.json")).unwrap();
    assert!(decorr(dir.path(), &args).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("m.json")).unwrap());
}

#[test]
fn train_rejects_partition_of_other_size() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    let o = decorr(dir.path(), &["--seed", "1", "generate", "--kind", "toy", "--n", "100", "--output", "small.csv"]);
    assert!(o.status.success());
    let o = decorr(dir.path(), &["--seed", "1", "partition", "--input", "small.csv", "--method", "random", "--output", "p.json"]);
    assert!(o.status.success());
    let o = decorr(dir.path(), &["--seed", "1", "train", "--input", "toy.csv", "--partition", "p.json", "--output", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("covers 100 rows"), "{}", stderr(&o));
}

#[test]
fn csv_errors_carry_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "a,b,target\n1,2,0\n3,,1\n").unwrap();
    let o = decorr(dir.path(), &["--seed", "1", "partition", "--input", "bad.csv", "--output", "p.json"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("row 2") && e.contains("'b'"), "{e}");
}

#[test]
fn missing_seed_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let o = decorr(dir.path(), &["generate", "--kind", "toy", "--n", "50", "--output", "t.csv"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("random seed"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(decorr(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(decorr(dir.path(), &["partition", "--input", "x.csv"]).status.code(), Some(1));
    assert_eq!(decorr(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_method_lists_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "suite = \"irm_example\"\nmethods = [\"erm\", \"irm\"]\n").unwrap();
    let o = decorr(dir.path(), &["suite", "s.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("decorr+irm") && e.contains("random+irm"), "{e}");
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "suite = \"irm_example\"\n\ntrials = \"many\"\n").unwrap();
    let o = decorr(dir.path(), &["suite", "s.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn irm_example_smoke_suite_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "suite = \"irm_example\"\ntrials = 2\ndims = [2]\nenv_counts = [2]\nseed = 3\n").unwrap();
    let start = Instant::now();
    let o = decorr(dir.path(), &["suite", "s.toml", "--output", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("decorr+irm") && table.contains("coef_mse"), "{table}");
    let reports = read_json(&dir.path().join("out/irm_example.json"));
    assert_eq!(reports.as_array().unwrap().len(), 6);
    assert!(dir.path().join("out/irm_example.csv").exists());
}

#[test]
fn toy_dump_writes_scatter_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), "suite = \"toy_dump\"\ntrials = 1\ntoy_n = 200\nmethods = [\"decorr+irm\", \"random+irm\"]\n").unwrap();
    let o = decorr(dir.path(), &["--seed", "1", "suite", "t.toml", "--output", "toy"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("toy/toy_decorr.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,x1,env_id"));
    assert_eq!(lines.count(), 200);
    assert!(dir.path().join("toy/toy_random.csv").exists());
}

#[test]
fn generated_csv_reingests_with_env_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = decorr(dir.path(), &["--seed", "8", "generate", "--kind", "risks", "--envs", "3", "--n", "40", "--output", "r.csv"]);
    assert!(o.status.success());
    let o = decorr(
        dir.path(),
        &["--seed", "8", "train", "--input", "r.csv", "--env-column", "env", "--learner", "vrex", "--iters", "100", "--output", "m.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&dir.path().join("m.metrics.json"));
    assert_eq!(m["environments"].as_array().unwrap().len(), 3);
    assert_eq!(m["model"], "logistic");
}
