use std::path::Path;
use std::process::{Command, Output};

fn quanta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quanta"))
        .args(args)
        .env_remove("QUANTA_THREADS")
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn theory_writes_monotone_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = quanta(&["theory", "--alpha", "0.4", "--profile", "constant:0,1", "--n", "1:10000", "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("theory.csv"));
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 10_000);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "theory");
}

#[test]
fn unknown_flag_fails_with_usage() {
    let o = quanta(&["theory", "--alpha", "0.4", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let mut config: serde_json::Value = serde_json::from_str(&write_tiny_config(dir.path())).unwrap();
    config["eval_every"] = serde_json::json!(7);
    std::fs::write(&cfg, config.to_string()).unwrap();
    let o = quanta(&["sweep", "params", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(record["error"], "config");
    assert!(record["message"].as_str().unwrap().contains("eval_every"));
}

fn write_tiny_config(dir: &Path) -> String {
    // Tiny valid params config, written to `dir/tiny.json`.
    let cfg = serde_json::json!({
        "n_tasks": 3, "n": 8, "k": 2, "alpha": 0.4, "axis": "params",
        "widths": [4, 8, 16], "dataset_sizes": [100], "data_width": 8, "step_width": 8,
        "batch_size": 32, "total_steps": 20, "eval_every": 10, "eval_per_task": 5,
        "seed": 0, "loss_unit": "bits", "threshold_bits": 0.1,
        "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
        "zero_output_init": true
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    cfg.to_string()
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = quanta(&[
        "qdg", "--model", "/nonexistent/model.ckpt", "--data", "/nonexistent/data.bin", "--n-clusters", "3", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(record["error"], "io");
}

#[test]
fn desk_pipeline_chains_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    write_tiny_config(dir.path());

    let o = quanta(&["--threads", "1", "sweep", "params", "--config", &p("tiny.json"), "--out-dir", &p("sweep")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = quanta(&["gen", "--n-tasks", "3", "--n", "8", "--k", "2", "--per-task", "10", "--out-dir", &p("gen")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = quanta(&[
        "qdg", "--model", &format!("{}/model_2.ckpt", p("sweep")), "--data", &format!("{}/dataset.bin", p("gen")),
        "--n-clusters", "3", "--loss-filter", "inf", "--out-dir", &p("qdg"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = quanta(&["envelope", "--curves", &format!("{}/rankfreq.csv", p("qdg")), "--window", "1:3", "--out-dir", &p("env")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let manifest = |name: &str| -> serde_json::Value { serde_json::from_str(&read(&dir.path().join(name).join("manifest.json"))).unwrap() };
    let output_hash = |m: &serde_json::Value, file: &str| {
        m["outputs"].as_array().unwrap().iter().find(|o| o["path"] == file).unwrap()["sha256"].clone()
    };
    let (sweep, gen, qdg, env) = (manifest("sweep"), manifest("gen"), manifest("qdg"), manifest("env"));
    assert_eq!(qdg["inputs"][0]["sha256"], output_hash(&sweep, "model_2.ckpt"));
    assert_eq!(qdg["inputs"][1]["sha256"], output_hash(&gen, "dataset.bin"));
    assert_eq!(env["inputs"][0]["sha256"], output_hash(&qdg, "rankfreq.csv"));
    assert!(read(&dir.path().join("qdg").join("similarity.svg")).contains(qdg["run_id"].as_str().unwrap()));
}

#[test]
fn replay_reproduces_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    write_tiny_config(dir.path());
    let o = quanta(&["--threads", "1", "sweep", "params", "--config", &p("tiny.json"), "--no-models", "--out-dir", &p("a")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = quanta(&["--threads", "1", "replay", &format!("{}/manifest.json", p("a")), "--out-dir", &p("b")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["mean_loss.csv", "subtask_loss.csv", "trajectory.csv"] {
        assert_eq!(read(&dir.path().join("a").join(file)), read(&dir.path().join("b").join(file)), "{file}");
    }
}

#[test]
fn plot_command_renders_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "x,y,g\n1,2,a\n10,3,a\n1,5,b\n10,6,b\n").unwrap();
    let o = quanta(&[
        "plot", "--csv", csv.to_str().unwrap(), "--x", "x", "--y", "y", "--group", "g", "--log-x", "--out-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = read(&dir.path().join("o").join("plot.svg"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}
