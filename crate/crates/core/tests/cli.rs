use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
head = "isomaxplus"
widths = [2, 16, 8]
scores = ["min_distance", "entropic"]
seeds = [0, 1]
output_dir = "out"

[sgd]
epochs = 4
decay_epochs = [3]
batch_size = 32

[in_distribution]
kind = "blobs"
classes = 3
dims = 2
radius = 4.0
sigma = 0.5
n_per_class = 40

[[ood]]
name = "ring"
kind = "ring"
inner_radius = 8.0
outer_radius = 12.0
n = 60
seed = 1

[[ood]]
name = "box"
kind = "uniform"
low = -16.0
high = 16.0
n = 60
seed = 2
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entropic-ood"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let o = cli(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("/definitely/not/here.toml"),
        "{}",
        stderr(&o)
    );
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn malformed_config_and_unknown_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.toml",
        &CONFIG.replace("classes = 3", "classes = 1"),
    );
    let o = cli(&["run", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 2 classes"));
    assert_eq!(cli(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&[]).status.code(), Some(2));
}

#[test]
fn gradcheck_reports_within_tolerance() {
    let o = cli(&["gradcheck", "--instances", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max relative error ")
        .and_then(|r| r.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unexpected line {last:?}"));
    assert!(value <= 1e-4);
}

#[test]
fn train_then_eval_reproduces_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", CONFIG);
    let out = dir.path().join("out");

    let o = cli(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = json(&out.join("train-summary.json"));
    let trace = fs::read_to_string(out.join("trace-seed1.csv")).unwrap();
    assert!(trace.starts_with("epoch,learning_rate,mean_loss,train_accuracy\n"));
    assert_eq!(trace.lines().count(), 5);

    for entry in summary.as_array().unwrap() {
        let seed = entry["seed"].as_u64().unwrap().to_string();
        let ck = out.join(format!("checkpoint-seed{seed}.bin"));
        let o = cli(&[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            ck.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let report = json(&out.join(format!("report-seed{seed}.json")));
        assert_eq!(report["runs"][0]["val_accuracy"], entry["val_accuracy"]);
        assert_eq!(
            report["runs"][0]["seed"].as_u64().unwrap().to_string(),
            seed
        );
    }
}

#[test]
fn run_matches_train_and_writes_score_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        &CONFIG.replace(
            "output_dir = \"out\"",
            "output_dir = \"out\"\ndump_scores = true",
        ),
    );
    let o = cli(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out-dir",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&dir.path().join("r/report.json"));
    assert_eq!(report["config"]["seeds"], serde_json::json!([1]));
    let dump = fs::read_to_string(dir.path().join("r/scores/seed1-ring-min_distance.csv")).unwrap();
    let mut lines = dump.lines();
    assert_eq!(lines.next(), Some("score,group"));
    let rows: Vec<&str> = lines.collect();
    // 20% of 120 validation rows, then 60 ring samples
    assert_eq!(rows.iter().filter(|l| l.ends_with(",in")).count(), 24);
    assert_eq!(rows.iter().filter(|l| l.ends_with(",out")).count(), 60);

    let o = cli(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out-dir",
        dir.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary = json(&dir.path().join("t/train-summary.json"));
    assert_eq!(
        summary[0]["val_accuracy"],
        report["runs"][0]["val_accuracy"]
    );
}

#[test]
fn eval_rejects_a_checkpoint_of_another_head() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", CONFIG);
    assert_eq!(
        cli(&["train", "--config", &cfg, "--seed", "0"])
            .status
            .code(),
        Some(0)
    );
    let other = write_config(
        dir.path(),
        "iso.toml",
        &CONFIG.replace("head = \"isomaxplus\"", "head = \"isomax\""),
    );
    let ck = dir.path().join("out/checkpoint-seed0.bin");
    let o = cli(&[
        "eval",
        "--config",
        &other,
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("isomaxplus head but isomax was expected"),
        "{}",
        stderr(&o)
    );

    let truncated = dir.path().join("short.bin");
    fs::write(&truncated, &fs::read(&ck).unwrap()[..30]).unwrap();
    let o = cli(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        truncated.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("truncated"));
}

#[test]
fn hist_writes_counts_for_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", CONFIG);
    assert_eq!(
        cli(&["train", "--config", &cfg, "--seed", "0"])
            .status
            .code(),
        Some(0)
    );
    let ck = dir.path().join("out/checkpoint-seed0.bin");
    let o = cli(&[
        "hist",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--ood",
        "box",
        "--bins",
        "12",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for quantity in ["entropy", "min-distance"] {
        let text = fs::read_to_string(
            dir.path()
                .join(format!("out/hist-{quantity}-seed0-box.csv")),
        )
        .unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            ["bin_left", "bin_right", "count_in", "count_out"]
        );
        let (mut ins, mut outs, mut bins) = (0, 0, 0);
        for rec in rdr.records() {
            let rec = rec.unwrap();
            ins += rec[2].parse::<usize>().unwrap();
            outs += rec[3].parse::<usize>().unwrap();
            bins += 1;
        }
        assert_eq!((ins, outs), (24, 60));
        assert!(bins == 12 || bins == 1);
    }
    let o = cli(&[
        "hist",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--bins",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_tabulates_heads() {
    let dir = tempfile::tempdir().unwrap();
    let plus = write_config(dir.path(), "plus.toml", CONFIG);
    let soft = write_config(
        dir.path(),
        "soft.toml",
        &CONFIG
            .replace("head = \"isomaxplus\"", "head = \"softmax\"")
            .replace("[\"min_distance\", \"entropic\"]", "[\"entropic\"]"),
    );
    let out = dir.path().join("cmp");
    let o = cli(&[
        "compare",
        "--config",
        &soft,
        "--config",
        &plus,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(
        table.contains("SoftMax_ES") && table.contains("IsoMax+_MDS"),
        "{table}"
    );
    assert!(table.contains("AUROC") && table.contains("TNR@TPR95") && table.contains("DTACC"));
    let cmp = json(&out.join("comparison.json"));
    assert_eq!(cmp["baseline"], "SoftMax_ES");
    assert_eq!(cmp["columns"].as_array().unwrap().len(), 2);

    let o = cli(&["compare", "--config", &soft]);
    assert_eq!(o.status.code(), Some(2));
}
