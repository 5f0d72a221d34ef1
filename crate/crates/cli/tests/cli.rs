use std::path::Path;
use std::process::{Command, Output};

use mcdbn::eval::ComparisonTable;

const TINY: &str = r#"{
  "train": {"epochs": 2, "pretrain_epochs": 2, "hidden_sizes": [8, 4],
            "downstream": {"hidden": 4, "window": 4, "epochs": 2, "lr": 0.05, "batch_windows": 8}},
  "synthetic": {"t": 60, "instruments": 2}
}"#;

fn mcdbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcdbn"))
        .args(args)
        .env_remove("MCDBN_SEED")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = mcdbn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("ERROR:usage:"), "{err}");
    assert!(err.contains("Usage:"));
}

#[test]
fn help_exits_zero() {
    let out = mcdbn(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "synth",
        "impute",
        "train",
        "evaluate",
        "ablate",
        "gradcheck",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"train": {"lr": -1}}"#);
    let out = mcdbn(&["train", "--config", &cfg, "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("ERROR:config:"));

    let cfg = write_config(dir.path(), r#"{"trian": {}}"#);
    let out = mcdbn(&["evaluate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcdbn(&[
        "impute",
        "--method",
        "zero",
        "--in",
        s(&dir.path().join("none")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR:data:"), "{}", stderr(&out));
}

#[test]
fn bad_seed_variable_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_mcdbn"))
        .args(["gradcheck"])
        .env("MCDBN_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("MCDBN_SEED"));
}

#[test]
fn synth_train_impute_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, TINY);

    let out = mcdbn(&["synth", "--config", &cfg, "--out", s(&d.join("syn"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let inst = d.join("syn/instrument_00");
    for f in [
        "series.csv",
        "events.csv",
        "labels.csv",
        "truth/series.csv",
        "truth/events.csv",
    ] {
        assert!(inst.join(f).exists(), "{f}");
    }
    assert!(d.join("syn/instrument_01").exists());
    let events = std::fs::read_to_string(inst.join("events.csv")).unwrap();
    assert!(events.contains(",,") || events.lines().any(|l| l.ends_with(',')));

    let run = d.join("run");
    let out = mcdbn(&["train", "--config", &cfg, "--out", s(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        stderr(&out)
            .lines()
            .filter(|l| l.starts_with("epoch "))
            .count(),
        2
    );
    let trace = std::fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next(),
        Some("epoch,loss_total,loss_modal_x,loss_modal_y,loss_task")
    );
    assert_eq!(trace.lines().count(), 3);
    let model = run.join("model.ckpt");
    assert_eq!(&std::fs::read(&model).unwrap()[..4], b"MCDB");

    for method in ["zero", "locf", "nocb", "mean", "interp", "rolling(3)"] {
        let target = d.join(format!("imp_{method}"));
        let out = mcdbn(&[
            "impute",
            "--method",
            method,
            "--in",
            s(&inst),
            "--out",
            s(&target),
        ]);
        assert!(out.status.success(), "{method}: {}", stderr(&out));
        let filled = std::fs::read_to_string(target.join("events.csv")).unwrap();
        assert!(
            filled
                .lines()
                .skip(1)
                .all(|l| !l.contains(",,") && !l.ends_with(',')),
            "{method}"
        );
    }
    let target = d.join("imp_mcdbn");
    let out = mcdbn(&[
        "impute",
        "--method",
        "mcdbn",
        "--in",
        s(&inst),
        "--out",
        s(&target),
        "--model",
        s(&model),
        "--config",
        &cfg,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let filled = std::fs::read_to_string(target.join("events.csv")).unwrap();
    let observed = std::fs::read_to_string(inst.join("events.csv")).unwrap();
    let rows = |text: &str| -> std::collections::BTreeMap<i64, Vec<String>> {
        text.lines()
            .skip(1)
            .map(|l| {
                let cells: Vec<String> = l.split(',').map(str::to_string).collect();
                (cells[0].parse().unwrap(), cells)
            })
            .collect()
    };
    let (observed, filled) = (rows(&observed), rows(&filled));
    assert_eq!(filled.len(), 60);
    for (ts, cells) in &filled {
        assert!(cells.iter().all(|c| !c.is_empty()));
        if let Some(seen) = observed.get(ts) {
            for (x, y) in seen.iter().zip(cells) {
                if !x.is_empty() {
                    assert_eq!(x, y);
                }
            }
        }
    }

    let out = mcdbn(&[
        "impute",
        "--method",
        "mcdbn",
        "--in",
        s(&inst),
        "--out",
        s(&target),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = mcdbn(&[
        "impute",
        "--method",
        "single",
        "--in",
        s(&inst),
        "--out",
        s(&target),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let eval = |seed: &str| {
        mcdbn(&[
            "--seed",
            seed,
            "evaluate",
            "--config",
            &cfg,
            "--model",
            s(&model),
        ])
    };
    let out = eval("7");
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["seed"], 7);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 16);
    assert!(json["rmse"].as_f64().unwrap().is_finite());
    assert_eq!(out.stdout, eval("7").stdout);
    let other: serde_json::Value = serde_json::from_slice(&eval("8").stdout).unwrap();
    assert_eq!(other["seed"], 8);
    assert_ne!(other["config_hash"], json["config_hash"]);
}

#[test]
fn evaluate_without_model_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        &TINY.replace(
            r#""synthetic""#,
            r#""methods": ["zero", "mean", "mean"], "synthetic""#,
        ),
    );
    let out = mcdbn(&[
        "--threads",
        "2",
        "evaluate",
        "--config",
        &cfg,
        "--out",
        s(&d.join("tab")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: ComparisonTable = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(table.summary.len(), 3);
    assert_eq!(table.detail.len(), 6);
    assert_eq!(table.summary[1], table.summary[2]);
    let summary = std::fs::read_to_string(d.join("tab/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(d.join("tab/detail.csv").exists());
    assert_eq!(std::fs::read(d.join("tab/table.json")).unwrap(), out.stdout);

    let single = mcdbn(&["--threads", "1", "evaluate", "--config", &cfg]);
    assert_eq!(single.stdout, out.stdout);
}

#[test]
fn loss_ablation_lists_three_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = mcdbn(&["ablate", "--which", "loss", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: ComparisonTable = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = table.summary.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["L_modal_y", "L_modal_x", "L_modal_x + L_modal_y"]);

    let out = mcdbn(&["ablate", "--which", "encoder", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}
