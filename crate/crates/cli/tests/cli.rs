use std::path::Path;
use std::process::{Command, Output};

fn kai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kai"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kai(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    kai(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_forecast_evaluate_ablate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let fc = tmp.path().join("fc");
    ok(&[
        "synth-data",
        "--out",
        s(&data),
        "--days",
        "40",
        "--seed",
        "3",
    ]);
    assert!(data.join("dataset.json").is_file());

    ok(&[
        "--preset",
        "desk",
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--epochs",
        "2",
        "--max-steps",
        "3",
    ]);
    for f in [
        "checkpoint.kaickpt",
        "last.kaickpt",
        "train_log.csv",
        "norm_stats.csv",
        "config.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,train_loss,val_wrmse\n"));

    let ckpt = run.join("checkpoint.kaickpt");
    ok(&[
        "forecast",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--days",
        "3",
        "--out",
        s(&fc),
        "--heatmap",
        "wave1",
    ]);
    let inits: Vec<_> = std::fs::read_dir(&fc)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(!inits.is_empty());
    let first = &inits[0];
    assert!(first.join("run.json").is_file());
    assert!(first.join("lead003.kaigrid").is_file());
    assert!(first.join("lead001_wave1.ppm").is_file());
    assert!(first.join("lead001_wave1.ppm.json").is_file());

    let prefix = tmp.path().join("metrics");
    ok(&[
        "evaluate",
        "--forecasts",
        s(&fc),
        "--data",
        s(&data),
        "--out",
        s(&prefix),
    ]);
    let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("source,variable,lead,rmse,acc,pattern_corr,count\n"));
    assert!(csv.contains("persistence,adv_unit,1,"));
    assert!(tmp.path().join("metrics.json").is_file());

    let variants = tmp.path().join("variants.json");
    std::fs::write(
        &variants,
        r#"[{"mixer": "pointwise_conv", "activation": "gelu", "padding": "geocyclic"}]"#,
    )
    .unwrap();
    let abl = tmp.path().join("abl");
    let cfg = tmp.path().join("short.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 1, "max_steps": 2}}"#).unwrap();
    ok(&[
        "--preset",
        "desk",
        "--config",
        s(&cfg),
        "ablate",
        "--data",
        s(&data),
        "--out",
        s(&abl),
        "--variants",
        s(&variants),
    ]);
    let table = std::fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains("pointwise_conv/gelu/geocyclic,"));
}

#[test]
fn inspect_reports_the_parameter_count() {
    let text = ok(&["inspect", "--preset", "paper"]);
    assert!(
        text.contains("6842087") || text.contains("6,842,087"),
        "{text}"
    );
    let json: serde_json::Value = serde_json::from_str(&ok(&["inspect", "--json"])).unwrap();
    assert!(json.to_string().contains("6842087"));
}

#[test]
fn exit_codes_follow_the_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_cfg = tmp.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"train": {"learning_rate": 1.0}}"#).unwrap();
    assert_eq!(code(&["--config", s(&bad_cfg), "inspect"]), 2);
    assert_eq!(
        code(&["--config", s(&tmp.path().join("absent.json")), "inspect"]),
        2
    );
    assert_eq!(
        code(&[
            "synth-data",
            "--out",
            s(&tmp.path().join("x")),
            "--width",
            "7"
        ]),
        2
    );

    let missing = tmp.path().join("nowhere");
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&missing),
            "--out",
            s(&tmp.path().join("o"))
        ]),
        3
    );

    let data = tmp.path().join("data");
    ok(&["synth-data", "--out", s(&data), "--days", "24"]);
    let run = tmp.path().join("run");
    assert_eq!(
        code(&[
            "--preset",
            "desk",
            "train",
            "--data",
            s(&data),
            "--out",
            s(&run),
            "--epochs",
            "5",
            "--lr",
            "1e30",
        ]),
        4
    );
}
