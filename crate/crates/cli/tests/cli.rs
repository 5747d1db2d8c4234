use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[generate]
train_size = 400
dev_size = 100
test_size = 100
spurious_strength = 0.9

[train]
learning_rate = 0.002
batch_size = 64
epochs = 2
embedding_dim = 8
hidden_dim = 8
"#;

fn rationale(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rationale"));
    cmd.args(args);
    match env_out {
        Some(dir) => cmd.env("RATIONALE_OUT_DIR", dir),
        None => cmd.env_remove("RATIONALE_OUT_DIR"),
    };
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

#[test]
fn landscape_mrd_ties_spurious_and_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("l");
    let stdout = ok(&rationale(&["landscape", "--criterion", "mrd", "--out", out.to_str().unwrap()], None));
    assert!(stdout.contains("# resolved landscape configuration"));
    let file = json(&out.join("landscape.json"));
    let row = &file["rows"][0];
    let (s, n) = (row["loss_spurious"].as_f64().unwrap(), row["loss_noise"].as_f64().unwrap());
    assert!((s - n).abs() < 1e-12);
    assert_eq!(file["rows"].as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(out.join("landscape.md")).unwrap().contains(file["fingerprint"].as_str().unwrap()));
}

#[test]
fn repeated_training_gives_identical_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut sums = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let args = ["train", "-c", &cfg, "--criterion", "mmi", "--sparsity", "0.1", "--seed", "7", "--out", out.to_str().unwrap()];
        ok(&rationale(&args, None));
        let summary = json(&out.join("seed-7/summary.json"));
        sums.push(summary["log_checksum"].as_str().unwrap().to_string());

        let fp = summary["fingerprint"].as_str().unwrap().to_string();
        assert_eq!(json(&out.join("seed-7/checkpoint.json"))["fingerprint"], fp.as_str());
        let log = fs::read_to_string(out.join("seed-7/train.log")).unwrap();
        let header: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(header["fingerprint"], fp.as_str());
        let report = json(&out.join("report.json"));
        assert!(fs::read_to_string(out.join("report.md"))
            .unwrap()
            .contains(report["config_fingerprint"].as_str().unwrap()));
    }
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn config_errors_exit_two_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = tmp.path().join("never");
    let res = rationale(&["train", "-c", bad.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rat"));
    assert!(!out.exists());

    let res = rationale(&["train", "--sparsity", "1.5", "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(res.stdout.is_empty());
    assert!(!out.exists());

    let res = rationale(&["train", "--criterion", "maxent"], None);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let train_out = tmp.path().join("t");
    ok(&rationale(&["train", "-c", &cfg, "--seed", "1", "--out", train_out.to_str().unwrap()], None));
    let broken = tmp.path().join("broken.jsonl");
    fs::write(&broken, "{\"text\": \"a b\", \"label\": 0}\nnot json\n").unwrap();
    let res = rationale(
        &[
            "eval",
            "--checkpoint",
            train_out.join("seed-1/checkpoint.json").to_str().unwrap(),
            "--data",
            broken.to_str().unwrap(),
            "--out",
            tmp.path().join("e").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn generated_data_trains_evaluates_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&rationale(&["gen-data", "-c", &cfg_path, "--out", data.to_str().unwrap()], None));
    let manifest = json(&data.join("manifest.json"));
    let fp = manifest["fingerprint"].as_str().unwrap();
    assert_eq!(json(&data.join("lexicon.json"))["fingerprint"], fp);
    assert_eq!(json(&data.join("stats.json"))["fingerprint"], fp);
    assert_eq!(json(&data.join("stats.json"))["train"]["examples"], 400);

    let cfg = tmp.path().join("files.toml");
    fs::write(&cfg, format!("seeds = [0, 1]\n[data]\ndir = {:?}\n{}", data.display().to_string(), SMALL.replace("[generate]\ntrain_size = 400\ndev_size = 100\ntest_size = 100\nspurious_strength = 0.9\n", ""))).unwrap();
    let runs = tmp.path().join("runs");
    ok(&rationale(&["train", "-c", cfg.to_str().unwrap(), "--criterion", "mmi+penalty"], Some(&runs)));
    let report = json(&runs.join("train/report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["criterion"], "mmi+penalty");
    assert_eq!(report["dataset"], manifest["name"]);

    let eval_out = tmp.path().join("eval");
    let stdout = ok(&rationale(
        &[
            "eval",
            "--checkpoint",
            runs.join("train/seed-1/checkpoint.json").to_str().unwrap(),
            "--data",
            data.join("test.jsonl").to_str().unwrap(),
            "--name",
            manifest["name"].as_str().unwrap(),
            "--render",
            "html",
            "--out",
            eval_out.to_str().unwrap(),
        ],
        None,
    ));
    assert!(stdout.contains("| seed | S | P | R | F1 | Acc |"));
    let eval = json(&eval_out.join("eval.json"));
    assert_eq!(eval["config_fingerprint"], report["config_fingerprint"]);
    let row = &eval["runs"][0];
    for key in ["sparsity", "precision", "recall", "f1"] {
        assert!(row[key].is_number(), "{key}");
    }
    // The evaluated checkpoint reproduces the training-time test row.
    let seed1 = json(&runs.join("train/seed-1/report.json"));
    assert_eq!(row["f1"], seed1["runs"][0]["f1"]);
    let html = fs::read_to_string(eval_out.join("rationales.html")).unwrap();
    assert!(html.contains("<p>") && html.contains(report["config_fingerprint"].as_str().unwrap()));

    let agg = tmp.path().join("agg");
    ok(&rationale(
        &[
            "report",
            runs.join("train/seed-0").to_str().unwrap(),
            runs.join("train/seed-1").to_str().unwrap(),
            "--out",
            agg.to_str().unwrap(),
        ],
        None,
    ));
    assert_eq!(json(&agg.join("report.json"))["mean"], report["mean"]);
}

#[test]
fn report_refuses_mismatched_fingerprints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&rationale(&["train", "-c", &cfg, "--seed", "0", "--sparsity", "0.2", "--out", a.to_str().unwrap()], None));
    ok(&rationale(&["train", "-c", &cfg, "--seed", "1", "--sparsity", "0.3", "--out", b.to_str().unwrap()], None));
    let res = rationale(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("fingerprint mismatch"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn env_var_sets_default_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rationale(&["landscape"], Some(tmp.path())));
    assert!(tmp.path().join("landscape/landscape.json").is_file());
}
