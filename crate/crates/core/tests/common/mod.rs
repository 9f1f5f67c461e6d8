#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `fourcropnet` binary with `args`.
pub fn cli(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fourcropnet"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Small layer plan that trains in well under a second per epoch.
pub const TINY_MODEL: [&str; 6] = [
    "--set",
    "model.input_size=16",
    "--set",
    "model.channel_plan=[4,4,8,16]",
    "--set",
    "model.fc_plan=[16]",
];

/// Writes a synthetic dataset with `classes` classes of `per_class` images.
pub fn make_synth(dir: &Path, classes: usize, per_class: usize, size: u32, seed: u64) {
    let r = cli(&[
        "make-synth",
        "--out",
        path_str(dir),
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(r.code, 0, "make-synth failed: {}", r.stderr);
}

/// Parses `confusion.csv` into a count matrix.
pub fn read_confusion(path: &Path) -> Vec<Vec<u64>> {
    let text = std::fs::read_to_string(path).expect("confusion.csv exists");
    text.lines()
        .skip(1)
        .map(|line| line.split(',').skip(1).map(|v| v.parse().expect("count")).collect())
        .collect()
}
