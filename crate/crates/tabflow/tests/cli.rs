use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tabflow::commands;
use tabflow::config::RunConfig;
use tabflow::pipeline::{self, Inputs, METRICS_KEYS};
use tabflow::tune;
use tabflow::ModelBundle;
use tabflow_core::data::Preprocessor;
use tabflow_core::model::{DensityModel, HALF_LN_TWO_PI};
use tabflow_core::Rng;

struct Fixture {
    dir: tempfile::TempDir,
}

const SCHEMA: &str = "x: numeric\ncolour: categorical\nday: date\nnote: ignore\ny: target\n";

const SMALL: &str = "\
[train]
batch_size = 64
max_epochs = 3
patience = 2
learning_rate = 0.01

[model]
embedding_dim = 4
blocks = 1
bins = 4

[metrics]
samples = 50
";

impl Fixture {
    /// `rows` rows with y = 3 + 2 x + noise and a few categories and dates.
    fn new(rows: usize, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(11);
        let mut csv = String::from("x,colour,day,note,y\n");
        for i in 0..rows {
            let x = rng.normal();
            let y = 3.0 + 2.0 * x + 0.5 * rng.normal();
            let colour = ["red", "green", "", "blue"][i % 4];
            csv += &format!("{x},{colour},2024-01-{:02},n{i},{y}\n", 1 + i % 28);
        }
        fs::write(dir.path().join("data.csv"), csv).unwrap();
        fs::write(dir.path().join("data.schema"), SCHEMA).unwrap();
        let f = Self { dir };
        f.config(extra);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, extra: &str) {
        let text = format!(
            "out = \"{}\"\n{extra}\n[data]\npath = \"data.csv\"\nschema = \"data.schema\"\n{SMALL}",
            self.path("out").display()
        );
        fs::write(self.path("run.toml"), text).unwrap();
    }

    fn load(&self) -> RunConfig {
        RunConfig::load(&self.path("run.toml")).unwrap()
    }

    fn run(&self, args: &[&str]) -> std::process::Output {
        Command::new(env!("CARGO_BIN_EXE_tabflow"))
            .args(args)
            .arg("--config")
            .arg(self.path("run.toml"))
            .output()
            .unwrap()
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn invalid_schema_path_exits_with_status_2() {
    let f = Fixture::new(40, "");
    fs::remove_file(f.path("data.schema")).unwrap();
    let out = f.run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("data.schema"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_with_status_2() {
    let f = Fixture::new(40, "learning_rat = 3");
    let out = f.run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn train_is_reproducible_and_writes_artifacts() {
    let f = Fixture::new(120, "seed = 5");
    let out = f.run(&["train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = fs::read(f.path("out/history.json")).unwrap();
    let model = fs::read(f.path("out/model.bin")).unwrap();
    assert!(f.path("out/config.toml").exists());
    assert!(f.run(&["train"]).status.success());
    assert_eq!(fs::read(f.path("out/history.json")).unwrap(), history);
    assert_eq!(fs::read(f.path("out/model.bin")).unwrap(), model);
    assert_eq!(RunConfig::load(&f.path("out/config.toml")).unwrap().seed, 5);

    let out = f.run(&["train", "--seed", "6", "--out", f.path("other").to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(fs::read(f.path("other/history.json")).unwrap(), history);
}

#[test]
fn evaluate_writes_documented_metrics_and_one_row_per_test_row() {
    let f = Fixture::new(120, "");
    let config = f.load();
    commands::train(&config).unwrap();
    let metrics = commands::evaluate(&config, None).unwrap();
    let keys: BTreeSet<&str> = metrics.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, METRICS_KEYS.into_iter().collect());
    assert_eq!(read_json(&f.path("out/metrics.json")), metrics);
    assert_eq!(metrics["rows"], 12);
    assert_eq!(csv_rows(&f.path("out/predictions.csv")), 12);
    assert_eq!(metrics["n_samples"], 50);
    assert!(metrics["provenance"]["split"].as_str().unwrap().starts_with("cv 0"));
    assert_eq!(commands::evaluate(&config, None).unwrap(), metrics);
}

#[test]
fn untrained_model_scores_like_a_standard_normal() {
    let f = Fixture::new(200, "");
    let config = f.load();
    let inputs = Inputs::load(&config).unwrap();
    let part = pipeline::partition(&config, &inputs, 0).unwrap();
    let preprocessor = Preprocessor::fit(&part.train, &inputs.decl).unwrap();
    let model = DensityModel::new(
        preprocessor.schema(),
        config.train_config(0).model,
        preprocessor.target,
        &mut Rng::new(1),
    )
    .unwrap();
    let sigma = preprocessor.target.std;
    let targets = preprocessor.raw_targets(&part.test).unwrap();
    let bundle = ModelBundle { model, preprocessor };
    bundle.save(&f.path("out/model.bin")).unwrap();
    let metrics = commands::evaluate(&config, None).unwrap();
    let expected = targets
        .iter()
        .map(|y| {
            let z = bundle.preprocessor.target.standardize(*y);
            0.5 * z * z + HALF_LN_TWO_PI
        })
        .sum::<f64>()
        / targets.len() as f64
        + sigma.ln();
    assert!((metrics["nll"].as_f64().unwrap() - expected).abs() < 1e-10);
}

#[test]
fn riskcov_exports_both_curves_with_ten_rows() {
    let f = Fixture::new(150, "");
    let config = f.load();
    commands::train(&config).unwrap();
    let metrics = commands::riskcov(&config, None).unwrap();
    for method in ["inv_std", "neg_entropy"] {
        let path = f.path(&format!("out/riskcov_{method}.csv"));
        assert_eq!(csv_rows(&path), 10);
        assert!(fs::read_to_string(&path).unwrap().starts_with("coverage,risk\n"));
        assert!(metrics["aurc_by_method"][method].as_f64().unwrap() > 0.0);
    }
    assert_eq!(metrics["aurc"], metrics["aurc_by_method"]["inv_std"]);
}

#[test]
fn mape_risk_with_zero_targets_says_to_switch_measure() {
    let f = Fixture::new(100, "");
    let csv: Vec<String> = fs::read_to_string(f.path("data.csv"))
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| match l.rsplit_once(',') {
            Some((head, _)) if i % 2 == 1 => format!("{head},0"),
            _ => l.to_string(),
        })
        .collect();
    fs::write(f.path("data.csv"), csv.join("\n") + "\n").unwrap();
    fs::write(
        f.path("run.toml"),
        fs::read_to_string(f.path("run.toml")).unwrap() + "risk = \"mape\"\n",
    )
    .unwrap();
    let config = f.load();
    commands::train(&config).unwrap();
    let e = commands::riskcov(&config, None).unwrap_err().to_string();
    assert!(e.contains("different risk measure"), "{e}");
}

#[test]
fn predict_and_sample_accept_rows_without_targets() {
    let f = Fixture::new(100, "");
    let config = f.load();
    commands::train(&config).unwrap();
    fs::write(
        f.path("new.csv"),
        "colour,x,day\nred,0.5,2024-02-01\npurple,-1,2024-01-03\n",
    )
    .unwrap();
    assert_eq!(commands::predict(&config, None, Some(&f.path("new.csv"))).unwrap(), 2);
    assert_eq!(csv_rows(&f.path("out/predictions.csv")), 2);
    assert_eq!(commands::sample(&config, None, Some(&f.path("new.csv"))).unwrap(), 2);
    assert_eq!(csv_rows(&f.path("out/samples.csv")), 100);
    assert_eq!(commands::predict(&config, None, None).unwrap(), 10);
}

#[test]
fn evaluate_rejects_a_model_trained_on_another_schema() {
    let f = Fixture::new(100, "");
    let config = f.load();
    commands::train(&config).unwrap();
    fs::write(f.path("data.schema"), "x: numeric\ncolour: ignore\ny: target\n").unwrap();
    let e = commands::evaluate(&config, None).unwrap_err();
    assert!(e.to_string().contains("schema"), "{e}");
}

#[test]
fn benchmark_aggregates_and_resumes() {
    let f = Fixture::new(100, "");
    let out = f.run(&["benchmark", "--splits", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = read_json(&f.path("out/results.json"));
    assert_eq!(first["splits_completed"], 2);
    assert_eq!(first["partial"], false);
    assert!(first["nll"]["std"].is_number());
    let again = f.run(&["benchmark", "--splits", "2"]);
    assert_eq!(String::from_utf8_lossy(&again.stdout).matches("reusing").count(), 2);
    let second = read_json(&f.path("out/results.json"));
    assert_eq!(second["nll"], first["nll"]);

    let out = f.run(&["benchmark", "--splits", "1", "--out", f.path("one").to_str().unwrap()]);
    assert!(out.status.success());
    let single = read_json(&f.path("one/results.json"));
    assert_eq!(single["nll"]["std"], "NA");
    assert!(String::from_utf8_lossy(&out.stdout).contains("± NA"));
}

#[test]
fn chronological_split_from_config() {
    let f = Fixture::new(
        120,
        "[split]\nkind = \"chrono\"\ncolumn = \"day\"\ntrain_end = \"2024-01-20\"\nval_end = \"2024-01-24\"\ntest_end = \"2024-01-27\"",
    );
    let config = f.load();
    commands::train(&config).unwrap();
    let metrics = commands::evaluate(&config, None).unwrap();
    // days 25..=27 are test, day 28 is dropped
    assert_eq!(metrics["provenance"]["dropped_rows"], 4);
    assert_eq!(metrics["rows"], 12);
}

#[test]
fn tune_logs_every_trial() {
    let f = Fixture::new(100, "[tune]\nbudget = 3\nmax_epochs = 2");
    let config = f.load();
    let (best, nll, trials) = tune::tune(&config).unwrap();
    assert_eq!(trials.len(), 3);
    assert_eq!(
        fs::read_to_string(f.path("out/trials.jsonl")).unwrap().lines().count(),
        3
    );
    let min = trials.iter().filter_map(|t| t.val_nll).fold(f64::INFINITY, f64::min);
    assert_eq!(nll, min);
    assert!(RunConfig::parse(&fs::read_to_string(f.path("out/best_config.toml")).unwrap()).is_ok());
    assert_ne!(best.model, config.model);

    let f = Fixture::new(100, "[tune]\nbudget = 1\nmax_epochs = 2");
    let (best, _, trials) = tune::tune(&f.load()).unwrap();
    assert_eq!(trials.len(), 1);
    assert_eq!(best.model, trials[0].model);
}

#[test]
fn tuned_config_is_no_worse_than_defaults_on_bimodal_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(42);
    let mut csv = String::from("x,y\n");
    for _ in 0..2000 {
        let x = rng.normal();
        let mode = if rng.uniform() < 0.5 { -2.0 } else { 2.0 };
        csv += &format!("{x},{}\n", mode + 0.5 * rng.normal());
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    fs::write(dir.path().join("data.schema"), "x: numeric\ny: target\n").unwrap();
    let text = format!(
        "out = \"{}\"\n[data]\npath = \"data.csv\"\nschema = \"data.schema\"\n[train]\nbatch_size = 256\n[tune]\nbudget = 20\nmax_epochs = 60\n",
        dir.path().join("out").display()
    );
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let config = RunConfig::load(&dir.path().join("run.toml")).unwrap();

    let default_nll = commands::train(&config).unwrap().best_val_nll;
    let (_, tuned_nll, trials) = tune::tune(&config).unwrap();
    assert_eq!(trials.len(), 20);
    assert!(tuned_nll <= default_nll, "tuned {tuned_nll} vs default {default_nll}");
}
