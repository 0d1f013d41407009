use std::path::Path;
use std::process::{Command, Output};

fn idf(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_idf"));
    cmd.args(args).env_remove("IDF_OUTPUT_DIR");
    if let Some(d) = env_dir {
        cmd.env("IDF_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn generate_random(dir: &Path) -> std::path::PathBuf {
    let csv = dir.join("data.csv");
    ok(&idf(
        &[
            "generate",
            "--kind",
            "random",
            "--n-series",
            "5",
            "--n-periods",
            "80",
            "--seed",
            "3",
            "--out",
            csv.to_str().unwrap(),
        ],
        None,
    ));
    csv
}

#[test]
fn generate_writes_csv_and_sidecar_into_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    ok(&idf(
        &[
            "generate",
            "--kind",
            "periodic",
            "--n-series",
            "3",
            "--n-periods",
            "100",
        ],
        Some(dir.path()),
    ));
    let csv = std::fs::read_to_string(dir.path().join("periodic.csv")).unwrap();
    assert!(csv.starts_with("item_id,period,demand\n"));
    assert_eq!(csv.lines().count(), 1 + 300);
    let meta = std::fs::read_to_string(dir.path().join("periodic.csv.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 0"));
}

#[test]
fn summarize_and_sbc() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(
        &csv,
        "item_id,period,demand\na,0,0\na,1,3\na,2,0\na,3,2\nz,0,0\nz,1,0\n",
    )
    .unwrap();
    let out = ok(&idf(&["summarize", "--data", csv.to_str().unwrap()], None));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["mean_size"], 2.5);
    assert_eq!(v["mean_interval"], 2.0);
    assert_eq!(v["n_all_zero"], 1);
    let out = ok(&idf(&["sbc", "--data", csv.to_str().unwrap()], None));
    assert!(out.contains("a,2,"));
    assert!(out.contains("z,,,all_zero"));
}

#[test]
fn bad_rows_exit_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,0,1\na,1,-4\n").unwrap();
    let out = idf(&["summarize", "--data", csv.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = idf(
        &["summarize", "--data", dir.path().join("missing.csv").to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    let out = idf(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_forecast_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate_random(dir.path());
    let data = csv.to_str().unwrap();
    let model = dir.path().join("m.json");
    ok(&idf(
        &[
            "fit",
            "--data",
            data,
            "--model",
            "static-nb-po",
            "--holdout",
            "6",
            "--out",
            model.to_str().unwrap(),
        ],
        None,
    ));
    let fc = dir.path().join("fc.csv");
    ok(&idf(
        &[
            "forecast",
            "--data",
            data,
            "--model",
            model.to_str().unwrap(),
            "--holdout",
            "6",
            "--horizon",
            "6",
            "--paths",
            "100",
            "--out",
            fc.to_str().unwrap(),
        ],
        None,
    ));
    let text = std::fs::read_to_string(&fc).unwrap();
    assert!(text.starts_with("item_id,period,mean,q0.1,q0.5,q0.9\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 6);
    let out = ok(&idf(
        &[
            "evaluate",
            "--data",
            data,
            "--forecast",
            fc.to_str().unwrap(),
            "--holdout",
            "6",
        ],
        None,
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["p90_loss"].as_f64().unwrap() >= 0.0);
    assert!(v["rmse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    std::fs::write(&csv, "a,0,1\na,1,0\na,2,0\n").unwrap();
    let out = idf(
        &[
            "fit",
            "--data",
            csv.to_str().unwrap(),
            "--model",
            "rnn-g-po",
            "--epochs",
            "2",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = idf(&["fit", "--data", csv.to_str().unwrap(), "--model", "croston"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_is_byte_deterministic_and_config_file_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "holdout = 4\nrepetitions = 1\nmodels = [\"croston\", \"zeros\", \"static-g-po\"]\n\n[hyperparameters]\nn_paths = 30\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let out_dir = dir.path().join(run);
        ok(&idf(
            &[
                "run",
                "--generator",
                "random",
                "--n-series",
                "4",
                "--n-periods",
                "50",
                "--seed",
                "9",
                "--holdout",
                "6",
                "--models",
                "tsb",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            None,
        ));
        let json = std::fs::read(out_dir.join("results.json")).unwrap();
        let csv = std::fs::read(out_dir.join("quantiles.csv")).unwrap();
        outputs.push((json, csv));
    }
    assert_eq!(outputs[0], outputs[1]);
    let v: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(v["config"]["holdout"], 4);
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn run_rejects_long_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = idf(
        &[
            "run",
            "--generator",
            "random",
            "--n-series",
            "2",
            "--n-periods",
            "10",
            "--holdout",
            "10",
            "--models",
            "croston",
        ],
        Some(dir.path()),
    );
    assert_eq!(out.status.code(), Some(1));
}
