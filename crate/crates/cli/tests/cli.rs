mod common;

use adda_core::data::DatasetContainer;
use common::{adda, bars, stderr, stdout, workspace};

#[test]
fn eval_on_matching_predictions_reports_full_accuracy() {
    let ws = workspace();
    let dir = ws.path();
    let out = adda(
        dir,
        &["--config", "cfg.json", "pretrain", "--source", "bars", "--out", "p"],
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let out = adda(
        dir,
        &[
            "--config",
            "cfg.json",
            "eval",
            "--encoder",
            "p/source.ckpt",
            "--dataset",
            "bars",
            "--out",
            "e",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // Relabel the data with the model's own predictions.
    let text = std::fs::read_to_string(dir.join("e/predictions.csv")).unwrap();
    let preds: Vec<u8> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let relabeled = DatasetContainer::load(&dir.join("data"), "bars")
        .unwrap()
        .with_labels(preds)
        .unwrap();
    let fixture = dir.join("fixture");
    std::fs::create_dir(&fixture).unwrap();
    relabeled.save(&fixture).unwrap();

    let out = adda(
        dir,
        &[
            "eval",
            "--encoder",
            "p/source.ckpt",
            "--dataset",
            "fixture/bars",
            "--out",
            "e2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("accuracy 1.0000"), "{}", stdout(&out));
}

#[test]
fn bad_magic_exits_with_format_code() {
    let ws = workspace();
    let dir = ws.path();
    let images = dir.join("data/bars-images.idx");
    let mut bytes = std::fs::read(&images).unwrap();
    bytes[3] = 0x02;
    std::fs::write(&images, bytes).unwrap();
    let out = adda(
        dir,
        &["--config", "cfg.json", "pretrain", "--source", "bars", "--out", "p"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("reason=bad-magic"), "{err}");
}

#[test]
fn missing_input_exits_with_io_code() {
    let ws = workspace();
    let out = adda(
        ws.path(),
        &["--config", "cfg.json", "pretrain", "--source", "absent", "--out", "p"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("reason=io"));
}

#[test]
fn divergence_exits_with_numeric_code() {
    let ws = workspace();
    let dir = ws.path();
    std::fs::write(
        dir.join("hot.json"),
        r#"{"seed": 1, "batch_size": 20, "pretrain": {"lr": 1e30, "epochs": 1}, "data_dir": "data"}"#,
    )
    .unwrap();
    let out = adda(
        dir,
        &["--config", "hot.json", "pretrain", "--source", "bars", "--out", "p"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("reason=divergence"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = workspace();
    let dir = ws.path();
    std::fs::write(dir.join("bad.json"), r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = adda(dir, &["--config", "bad.json", "pretrain", "--source", "bars"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn wrong_checkpoint_layout_is_a_format_error() {
    let ws = workspace();
    let dir = ws.path();
    assert!(adda(
        dir,
        &["--config", "cfg.json", "pretrain", "--source", "bars", "--out", "p"]
    )
    .status
    .success());
    let out = adda(
        dir,
        &[
            "--config",
            "cfg.json",
            "adapt",
            "--source",
            "bars",
            "--target",
            "shifted",
            "--checkpoint",
            "p/source.ckpt",
            "--out",
            "a",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // The adapted checkpoint holds no classifier.
    let out = adda(
        dir,
        &[
            "eval",
            "--encoder",
            "a/target.ckpt",
            "--dataset",
            "data/shifted",
            "--out",
            "e",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("reason=fingerprint-mismatch"));
    let out = adda(
        dir,
        &[
            "eval",
            "--encoder",
            "a/target.ckpt",
            "--classifier",
            "p/source.ckpt",
            "--dataset",
            "data/shifted",
            "--out",
            "e",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn data_dir_falls_back_to_environment() {
    let ws = workspace();
    let dir = ws.path();
    std::fs::write(
        dir.join("nodir.json"),
        r#"{"seed": 1, "pretrain": {"lr": 0.001, "epochs": 1}}"#,
    )
    .unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_adda"))
        .current_dir(dir)
        .env("ADDA_DATA_DIR", dir.join("data"))
        .args(["--config", "nodir.json", "pretrain", "--source", "bars", "--out", "p"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn manifest_records_inputs_and_config() {
    let ws = workspace();
    let dir = ws.path();
    let out = adda(
        dir,
        &[
            "--config",
            "cfg.json",
            "--seed",
            "9",
            "synth",
            "--dataset",
            "bars",
            "--name",
            "half",
            "--take",
            "100",
            "--shift",
            r#"{"kind":"invert","seed":0}"#,
            "--out",
            "s",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["config"]["seed"], 9);
    let inputs = manifest["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 2);
    assert!(inputs.values().all(|h| h.as_str().unwrap().len() == 64));
    assert!(manifest["args"].as_array().unwrap().iter().any(|a| a == "--take"));

    let half = DatasetContainer::load(&dir.join("s"), "half").unwrap();
    let orig = bars(200, 1, "bars");
    assert_eq!(half.len(), 100);
    assert_eq!(half.image(5)[0], 255 - orig.image(5)[0]);
    assert_eq!(half.labels(), &orig.labels()[..100]);
}

#[test]
fn confusion_from_predictions_file() {
    let ws = workspace();
    let dir = ws.path();
    std::fs::write(
        dir.join("preds.csv"),
        "index,label,prediction\n0,1,1\n1,2,3\n2,2,2\n3,9,9\n",
    )
    .unwrap();
    let out = adda(dir, &["confusion", "--predictions", "preds.csv", "--out", "c"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("accuracy 0.7500"));
    let counts = std::fs::read_to_string(dir.join("c/confusion_counts.csv")).unwrap();
    assert_eq!(counts.lines().nth(3).unwrap(), "2,0,0,1,1,0,0,0,0,0,0");

    std::fs::write(dir.join("broken.csv"), "index,label\n0,1\n").unwrap();
    let out = adda(dir, &["confusion", "--predictions", "broken.csv", "--out", "c2"]);
    assert_eq!(out.status.code(), Some(2));
}
