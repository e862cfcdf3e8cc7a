use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lupi-lab"))
        .args(args)
        .env("LUPILAB_MNIST_DIR", "/nonexistent/mnist")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("e1.csv");
    let o = lab(&["gen", "experiment1", "--set", "d=5", "--n", "120", "--seed", "4", "--out", path(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 120 rows"));
    let header = fs::read_to_string(&data).unwrap();
    assert_eq!(header.lines().count(), 121);

    let history = dir.path().join("hist.csv");
    let model = dir.path().join("model.json");
    let o = lab(&[
        "train",
        "--preset",
        "exp1",
        "--method",
        "gen_distill",
        "--data",
        path(&data),
        "--epochs",
        "3",
        "--history",
        path(&history),
        "--model-out",
        path(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["train_rows"], 84);
    assert_eq!(summary["test_rows"], 36);
    assert_eq!(summary["epochs"], 3);
    assert!(summary["test_metric"].as_f64().is_some());
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 4);
    assert!(model.exists());
}

#[test]
fn gen_rejects_unknown_generator() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["gen", "nope", "--out", path(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn flat_config_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.conf");
    let out = dir.path().join("results.csv");
    fs::write(
        &cfg,
        "name = smoke\npreset = exp1\ndata.kind = generator\ndata.generator = experiment1\ndata.d = 4\n\
         methods = [\"nopi\", \"gen_distill\"]\nseeds = [1, 2]\nsample_sizes = [40]\ntest_size = 100\n\
         overrides.epochs = 2\n",
    )
    .unwrap();
    let o = lab(&["experiment", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("config sha256"));
    let body = fs::read_to_string(&out).unwrap();
    // header plus 2 methods x 2 seeds at the final epoch
    assert_eq!(body.lines().count(), 5);

    let again = dir.path().join("again.csv");
    let o = lab(&["experiment", "--config", path(&cfg), "--out", path(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn verify_linear_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lin.json");
    let v = 1.0 / 5f64.sqrt();
    fs::write(
        &cfg,
        format!(
            "{{\"d_x\": 10, \"d_z\": 5, \"n\": 100, \"sigma\": 1.0, \"w_star\": [1,1,1,1,1,1,1,1,1,1], \
             \"v_star\": [{v},{v},{v},{v},{v}], \"seed\": 2024}}"
        ),
    )
    .unwrap();
    let o = lab(&["verify-linear", "--config", path(&cfg)]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
}

#[test]
fn gradcheck_exit_code() {
    let o = lab(&["gradcheck", "--preset", "exp1", "--batches", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = lab(&["gradcheck", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repro_linear_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["repro", "appendixA", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    assert!(dir.path().join("appendixA-report.json").exists());
}

#[test]
fn repro_unknown_and_skipped() {
    let o = lab(&["repro", "table9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("table1"));
    let o = lab(&["repro", "fig1-mnist"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("SKIPPED"));
}
