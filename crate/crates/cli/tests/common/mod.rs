#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use adda_core::data::DatasetContainer;

/// Class k is a vertical bar at a class-specific column over a noisy
/// background. Noise comes from a small LCG so fixtures need no RNG crate.
pub fn bars(n: usize, seed: u64, name: &str) -> DatasetContainer {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut noise = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) % 40) as u8
    };
    let mut images = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 10;
        for y in 0..28 {
            for x in 0..28 {
                let on = x >= 2 + 2 * k && x < 4 + 2 * k && (4..24).contains(&y);
                images.push(if on { 230 } else { noise() });
            }
        }
        labels.push(k as u8);
    }
    DatasetContainer::new(name, [1, 28, 28], images, labels).unwrap()
}

pub fn adda(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adda"))
        .current_dir(cwd)
        .env_remove("ADDA_DATA_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub const TINY_CONFIG: &str = r#"{
  "seed": 3,
  "batch_size": 20,
  "pretrain": {"lr": 0.001, "epochs": 2},
  "adapt": {"lr": 0.0001, "epochs": 1},
  "data_dir": "data"
}"#;

/// Working directory with `data/bars` (200 examples), `data/shifted`
/// (100 inverted examples) and `cfg.json`.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    bars(200, 1, "bars").save(&data).unwrap();
    let shifted =
        adda_core::data::apply_shift(&bars(100, 2, "shifted"), &adda_core::data::SyntheticShiftSpec::invert()).unwrap();
    shifted.save(&data).unwrap();
    std::fs::write(dir.path().join("cfg.json"), TINY_CONFIG).unwrap();
    dir
}
