//! End-to-end CLI contract: gen-data -> train -> eval -> query, plus exit
//! codes and file outputs.

use std::process::Command;

fn spotrank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spotrank"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn spotrank");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.tsv");
    let run_dir = tmp.path().join("run");
    let eval_dir = tmp.path().join("eval");

    let stdout = run_ok(spotrank().args([
        "gen-data",
        "--words",
        "12",
        "--samples",
        "6",
        "--min-len",
        "3",
        "--max-len",
        "5",
        "--seed",
        "7",
        "--out",
        data.to_str().unwrap(),
    ]));
    assert!(stdout.contains("72 samples"), "{stdout}");
    assert!(data.exists());
    assert!(tmp.path().join("data.tsv.manifest.json").exists());

    run_ok(spotrank().args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--mode",
        "join",
        "--seed",
        "1",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--samples-per-epoch",
        "32",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]));
    for artifact in ["history.csv", "manifest.json", "best.ckpt", "final.ckpt"] {
        assert!(run_dir.join(artifact).exists(), "{artifact} missing");
    }
    let history = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss_total"));
    assert_eq!(history.lines().count(), 3); // header + 2 epochs

    let stdout = run_ok(spotrank().args([
        "eval",
        "--checkpoint",
        run_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]));
    assert!(stdout.contains("QbS mAP"), "{stdout}");
    for artifact in [
        "metrics_summary.csv",
        "topn_curve.csv",
        "boxplot.csv",
        "summary.json",
    ] {
        assert!(eval_dir.join(artifact).exists(), "{artifact} missing");
    }

    // Repeated evaluation is byte-identical.
    let eval2 = tmp.path().join("eval2");
    run_ok(spotrank().args([
        "eval",
        "--checkpoint",
        run_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        eval2.to_str().unwrap(),
    ]));
    for artifact in ["metrics_summary.csv", "topn_curve.csv", "boxplot.csv"] {
        assert_eq!(
            std::fs::read(eval_dir.join(artifact)).unwrap(),
            std::fs::read(eval2.join(artifact)).unwrap(),
            "{artifact} not reproducible"
        );
    }

    // Query by string prints a ranked list with edit distances.
    let word = {
        let line = std::fs::read_to_string(&data).unwrap();
        line.lines()
            .next()
            .unwrap()
            .split('\t')
            .nth(1)
            .unwrap()
            .to_string()
    };
    let stdout = run_ok(spotrank().args([
        "query",
        "--checkpoint",
        run_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--string",
        &word,
        "--top",
        "5",
    ]));
    assert!(stdout.contains("rank"), "{stdout}");
    assert!(stdout.contains("transcription"), "{stdout}");

    // Query by example excludes itself from the list.
    let sample_id = {
        let line = std::fs::read_to_string(&data).unwrap();
        let last = line.lines().last().unwrap();
        last.split('\t').next().unwrap().to_string()
    };
    let stdout = run_ok(spotrank().args([
        "query",
        "--checkpoint",
        run_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--sample-id",
        &sample_id,
        "--top",
        "5",
    ]));
    assert!(!stdout.contains(&format!(" {sample_id} ")), "{stdout}");
}

#[test]
fn config_errors_exit_2_runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.tsv");
    run_ok(spotrank().args([
        "gen-data", "--words", "4", "--samples", "4", "--out",
        data.to_str().unwrap(),
    ]));

    // Unknown mode is a config error.
    let out = spotrank()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--mode",
            "invalid",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // batch_size 1 is a config error.
    let out = spotrank()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--batch-size",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Clap usage errors also exit 2.
    let out = spotrank().args(["train"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A missing dataset file is a runtime error.
    let out = spotrank()
        .args(["train", "--data", "/nonexistent/data.tsv", "--epochs", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // An unreadable checkpoint is a runtime error.
    let bogus = tmp.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = spotrank()
        .args([
            "eval",
            "--checkpoint",
            bogus.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_accepts_a_json_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.tsv");
    run_ok(spotrank().args([
        "gen-data", "--words", "6", "--samples", "6", "--out",
        data.to_str().unwrap(),
    ]));

    let config = tmp.path().join("train.json");
    std::fs::write(
        &config,
        r#"{ "mode": "ndcg", "epochs": 1, "batch_size": 6, "samples_per_epoch": 12 }"#,
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(spotrank().args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("manifest.json")).unwrap(),
    )
    .unwrap();
    // Config file fields hold; the CLI seed override wins.
    assert_eq!(manifest["config"]["mode"], "ndcg");
    assert_eq!(manifest["config"]["epochs"], 1);
    assert_eq!(manifest["config"]["seed"], 3);

    // Malformed config file is a config error.
    std::fs::write(&config, "{ not json").unwrap();
    let out = spotrank()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_root_env_var_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.tsv");
    run_ok(spotrank().args([
        "gen-data", "--words", "4", "--samples", "6", "--out",
        data.to_str().unwrap(),
    ]));
    let root = tmp.path().join("custom-root");
    run_ok(
        spotrank()
            .env("SPOTRANK_RUN_ROOT", root.to_str().unwrap())
            .args([
                "train",
                "--data",
                data.to_str().unwrap(),
                "--mode",
                "ap",
                "--seed",
                "2",
                "--epochs",
                "1",
                "--batch-size",
                "4",
                "--samples-per-epoch",
                "8",
            ]),
    );
    assert!(root.join("ap-seed2").join("history.csv").exists());
}
