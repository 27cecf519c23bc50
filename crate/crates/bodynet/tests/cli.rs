//! End-to-end tests of the `bodynet` binary: every subcommand, the exit-code
//! contract, and the artifacts each command writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bodynet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn bodynet")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

fn simulate(dir: &Path, mode: &str, duration: f64, seed: u64) {
    let out = run(&[
        "simulate",
        "--mode",
        mode,
        "--duration",
        &duration.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
}

/// Five 30 s sequences, alternating modes, under `root/data`.
fn small_dataset(root: &Path) -> PathBuf {
    let data = root.join("data");
    for i in 0..5u64 {
        let mode = if i % 2 == 0 { "STW" } else { "MVW" };
        simulate(&data.join(format!("seq{i}")), mode, 30.0, i);
    }
    data
}

/// `top` lands among the top-level keys; `sections` is appended at the end.
fn write_config(path: &Path, top: &str, sections: &str) {
    let model = "\
[model]
window = 64
channels = [4, 6, 6, 8, 8, 8]
gru_hidden = 8
d_loc = 8
heads = 2
loc_hidden = 8
";
    let text = format!(
        "learning_rate = 3e-4\nbatch_size = 16\nmax_epochs = 2\nseed = 7\n{top}\n{model}{sections}"
    );
    std::fs::write(path, text).unwrap();
}

/// Trains a tiny model and returns (checkpoint path, data dir).
fn trained_checkpoint(root: &Path) -> (PathBuf, PathBuf) {
    let data = small_dataset(root);
    let config = root.join("train.toml");
    write_config(&config, "", "");
    let run_dir = root.join("run");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    (run_dir.join("model.ckpt"), data)
}

#[test]
fn simulate_writes_a_complete_sequence_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seq");
    simulate(&dir, "STW", 30.0, 1);
    for f in ["phone.csv", "watch.csv", "earbuds.csv", "truth.csv", "manifest.toml"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }

    // Same seed, same bytes.
    let dir2 = tmp.path().join("seq2");
    simulate(&dir2, "STW", 30.0, 1);
    for f in ["phone.csv", "truth.csv", "manifest.toml"] {
        assert_eq!(
            std::fs::read(dir.join(f)).unwrap(),
            std::fs::read(dir2.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn simulate_rejects_an_unknown_mode_with_usage_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--mode", "JOG", "--out", tmp.path().to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("JOG"));
}

#[test]
fn unparseable_flags_exit_with_usage_code() {
    let out = run(&["train", "--no-such-flag"]);
    assert_exit(&out, 2);
}

#[test]
fn every_command_prints_the_config_digest_first() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--mode",
        "STW",
        "--duration",
        "30",
        "--out",
        tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let first = stdout(&out).lines().next().unwrap_or_default().to_string();
    assert!(first.starts_with("config digest: "), "got {first:?}");
    let hex = first.trim_start_matches("config digest: ");
    assert_eq!(hex.len(), 64);
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn train_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, _) = trained_checkpoint(tmp.path());
    assert!(ckpt.is_file());
    let report = std::fs::read_to_string(ckpt.parent().unwrap().join("report.jsonl")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 3, "2 epoch lines + summary, got:\n{report}");
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
    // The summary records the resolved variant.
    let summary: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
    assert_eq!(
        summary["variant"],
        "contrast_fe=true weighted_gf=true attentive_la=true"
    );
}

#[test]
fn train_missing_data_directory_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("train.toml");
    write_config(&config, "", "");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn train_override_changes_the_recorded_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let config = tmp.path().join("train.toml");
    write_config(&config, "", "");
    let run_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--override",
        "ablation.contrast_fe=false",
        "--override",
        "max_epochs=1",
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("contrast_fe=false weighted_gf=true attentive_la=true"));
    let report = std::fs::read_to_string(run_dir.join("report.jsonl")).unwrap();
    assert!(report.contains("contrast_fe=false"));
    assert_eq!(report.lines().count(), 2, "1 epoch line + summary");
}

#[test]
fn train_bad_override_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let config = tmp.path().join("train.toml");
    write_config(&config, "", "");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
        "--override",
        "no_such_field=1",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn divergent_training_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let config = tmp.path().join("train.toml");
    // An absurd step size blows the pure regression variant up to non-finite
    // loss on the first step (the cosine-free path cannot mask it earlier).
    write_config(
        &config,
        "",
        "\n[ablation]\ncontrast_fe = false\nweighted_gf = false\nattentive_la = false\n",
    );
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
        "--override",
        "learning_rate=1e160",
    ]);
    assert_exit(&out, 3);
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn eval_writes_reports_with_finite_metrics_and_pdr_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained_checkpoint(tmp.path());
    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--baseline",
        "pdr",
        "--interval",
        "10",
    ]);
    assert_exit(&out, 0);

    let csv = std::fs::read_to_string(eval_dir.join("sequences.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,mode,ate_m,rte_m,pdr_ate_m,pdr_rte_m"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 6, "row {row}");
        for c in &cols[2..] {
            let v: f64 = c.parse().expect("numeric metric");
            assert!(v.is_finite() && v >= 0.0);
        }
    }
    assert!(eval_dir.join("report.txt").is_file());
    assert!(eval_dir.join("cdf.csv").is_file());
}

#[test]
fn eval_cdf_flag_redirects_a_monotone_cdf() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained_checkpoint(tmp.path());
    let cdf_path = tmp.path().join("errors.csv");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
        "--cdf",
        cdf_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let cdf = std::fs::read_to_string(&cdf_path).unwrap();
    let mut lines = cdf.lines();
    assert_eq!(lines.next(), Some("error_m,probability"));
    let mut prev = (f64::NEG_INFINITY, 0.0);
    let mut last_p = 0.0;
    for line in lines {
        let (e, p) = line.split_once(',').unwrap();
        let e: f64 = e.parse().unwrap();
        let p: f64 = p.parse().unwrap();
        // Distinct errors can round to the same printed value, so the error
        // column is only non-decreasing; probability stays strict.
        assert!(e >= prev.0 && p > prev.1, "cdf not monotone at {line}");
        prev = (e, p);
        last_p = p;
    }
    assert!((last_p - 1.0).abs() < 1e-9, "cdf must end at 1, got {last_p}");
}

#[test]
fn eval_corrupt_checkpoint_is_a_mismatch_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained_checkpoint(tmp.path());
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        cut.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert_exit(&out, 4);
    assert!(stderr(&out).contains("mismatch"));
}

#[test]
fn eval_unknown_baseline_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained_checkpoint(tmp.path());
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
        "--baseline",
        "kalman",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn trace_writes_prediction_against_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained_checkpoint(tmp.path());
    let trace = tmp.path().join("trace.csv");
    let out = run(&[
        "trace",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--sequence",
        data.join("seq0").to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,y,truth_x,truth_y"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 10, "expected one point per window step");
    let mut prev_t = f64::NEG_INFINITY;
    for row in rows {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[0] > prev_t, "timestamps must increase");
        prev_t = cols[0];
        assert!(cols.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ingest_aligns_and_resamples_into_a_loadable_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    simulate(&raw, "STW", 30.0, 4);
    let cooked = tmp.path().join("cooked");
    let out = run(&[
        "ingest",
        "--dir",
        raw.to_str().unwrap(),
        "--rate",
        "25",
        "--out",
        cooked.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("offset"), "prints per-device offsets:\n{text}");
    for f in ["phone.csv", "watch.csv", "earbuds.csv", "truth.csv", "manifest.toml"] {
        assert!(cooked.join(f).is_file(), "missing {f}");
    }
    // All device streams now share the working rate.
    let manifest = std::fs::read_to_string(cooked.join("manifest.toml")).unwrap();
    assert_eq!(manifest.matches("rate_hz = 25.0").count(), 3, "{manifest}");
}

#[test]
fn ingest_missing_directory_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "ingest",
        "--dir",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn ablate_produces_a_six_variant_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let config = tmp.path().join("train.toml");
    write_config(&config, "max_steps = 4\n", "");
    let table = tmp.path().join("ablation.csv");
    let out = run(&[
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
        "--interval",
        "10",
    ]);
    assert_exit(&out, 0);
    let csv = std::fs::read_to_string(&table).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("variant,contrast_fe,weighted_gf,attentive_la,val_loss,ate_m,rte_m,status")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 8, "row {row}");
        assert_eq!(cols[0], (i + 1).to_string());
        assert_eq!(cols[7], "ok");
        for c in &cols[4..7] {
            assert!(c.parse::<f64>().unwrap().is_finite());
        }
    }
    // The two architecture flags differ across rows.
    assert!(csv.contains("false") && csv.contains("true"));
}

#[test]
fn gradcheck_passes_and_reports_every_component() {
    let out = run(&["gradcheck", "--seed", "0"]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    for component in
        ["conv1d", "batchnorm1d", "maxpool1d", "linear", "gru", "attention", "dropout"]
    {
        assert!(text.contains(component), "missing {component} in:\n{text}");
    }
    for row in 1..=6 {
        assert!(text.contains(&format!("full loss (variant {row})")));
    }
    assert!(text.contains("all gradients verified"));
}

#[test]
fn gradcheck_failure_exits_with_code_5() {
    let out = bin()
        .args(["gradcheck"])
        .env("BODYNET_GRADCHECK_CORRUPT", "attention")
        .output()
        .unwrap();
    assert_exit(&out, 5);
    assert!(stdout(&out).contains("FAIL"));
    assert!(stderr(&out).contains("attention"));
}

#[test]
fn config_dir_env_supplies_the_default_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let cfg_dir = tmp.path().join("cfg");
    std::fs::create_dir_all(&cfg_dir).unwrap();
    write_config(&cfg_dir.join("train.toml"), "max_steps = 2\n", "");
    let out = bin()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .env("BODYNET_CONFIG_DIR", cfg_dir.to_str().unwrap())
        .output()
        .unwrap();
    assert_exit(&out, 0);
    assert!(tmp.path().join("run/model.ckpt").is_file());

    // Without the variable and without --config there is nothing to train from.
    let out = bin()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("run2").to_str().unwrap(),
        ])
        .env_remove("BODYNET_CONFIG_DIR")
        .output()
        .unwrap();
    assert_exit(&out, 2);
}
