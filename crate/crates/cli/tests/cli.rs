use std::path::Path;
use std::process::{Command, Output};

fn neurovnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurovnn"))
        .args(args)
        .env_remove("THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path) -> std::path::PathBuf {
    let csv = dir.join("cohort.csv");
    let out = neurovnn(&["simulate", "--out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    csv
}

fn train_initial(dir: &Path, cohort: &Path) -> std::path::PathBuf {
    let model = dir.join("model.json");
    let out = neurovnn(&[
        "train",
        "--cohort",
        path(cohort),
        "--out-model",
        path(&model),
        "--max-epochs",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn simulate_writes_default_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cohort.csv");
    let truth = dir.path().join("truth.json");
    let out = neurovnn(&["simulate", "--out", path(&csv), "--truth-out", path(&truth)]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 551);
    assert_eq!(text.lines().filter(|l| l.contains(",HC,")).count(), 400);
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(truth["disease_regions"].as_array().unwrap().len(), 8);
}

#[test]
fn simulate_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert!(neurovnn(&["simulate", "--out", path(&a)]).status.success());
    assert!(neurovnn(&["simulate", "--out", path(&b)]).status.success());
    assert!(neurovnn(&["--seed", "3", "simulate", "--out", path(&c)]).status.success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn missing_required_flag_is_usage_error() {
    assert_eq!(neurovnn(&["simulate"]).status.code(), Some(2));
    assert_eq!(neurovnn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    std::fs::write(&config, "{\"n_hc\": 0}").unwrap();
    let out = neurovnn(&[
        "simulate",
        "--config",
        path(&config),
        "--out",
        path(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_zero_epochs_saves_initialized_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path());
    let model = train_initial(dir.path(), &csv);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["parameter_count"], 22570);
    assert_eq!(doc["training"]["epochs_run"], 0);

    let predictions = dir.path().join("pred.csv");
    let out = neurovnn(&[
        "predict",
        "--model",
        path(&model),
        "--cohort",
        path(&csv),
        "--out",
        path(&predictions),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&predictions).unwrap();
    assert_eq!(text.lines().next(), Some("subject_id,group,age,prediction"));
    assert_eq!(text.lines().count(), 551);
}

#[test]
fn train_without_controls_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path());
    let out = neurovnn(&[
        "train",
        "--cohort",
        path(&csv),
        "--out-model",
        path(&dir.path().join("m.json")),
        "--hc-group",
        "CN",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CN"));
}

#[test]
fn delta_age_with_identical_cohorts_prints_equal_means() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path());
    let model = train_initial(dir.path(), &csv);
    let reports = dir.path().join("reports");
    let out = neurovnn(&[
        "delta-age",
        "--model",
        path(&model),
        "--hc",
        path(&csv),
        "--disease",
        path(&csv),
        "--hc-group",
        "HC",
        "--disease-group",
        "HC",
        "--out",
        path(&reports),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let means: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("Δ-Age"))
        .map(|l| l.split("Δ-Age").nth(1).unwrap().trim())
        .collect();
    assert_eq!(means.len(), 2);
    assert_eq!(means[0], means[1]);
    assert!(reports.join("delta_age.json").exists());
}

#[test]
fn report_writes_every_file_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path());
    let model = train_initial(dir.path(), &csv);
    let mut contents = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = neurovnn(&[
            "report",
            "--model",
            path(&model),
            "--hc",
            path(&csv),
            "--disease",
            path(&csv),
            "--hc-group",
            "HC",
            "--disease-group",
            "AD",
            "--out",
            path(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["delta_age.json", "regions.csv", "regions.json", "explainability.json"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        contents.push(files);
    }
    assert_eq!(contents[0], contents[1]);
}

#[test]
fn mismatched_region_labels_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path());
    let model = train_initial(dir.path(), &csv);
    let text = std::fs::read_to_string(&csv).unwrap();
    let renamed = text.replacen("lh_bankssts", "lh_unknown", 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, renamed).unwrap();
    let out = neurovnn(&[
        "explain",
        "--model",
        path(&model),
        "--hc",
        path(&bad),
        "--disease",
        path(&csv),
        "--out",
        path(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
