#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that a full chain finishes in well under a second.
pub const TINY: &str = r#"
seed = 3
per_class = 6
window = 128
stride = 32

[model]
window_length = 128
kernel_sizes = [3, 9]
branch_channels = [4, 4]

[train]
epochs = 1
batch_size = 8

[rvfl]
hidden = 12

[stream]
segment_windows = [10, 20, 10]
onset_in_m2 = 8
window = 128
stride = 32
"#;

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultdg"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn fail(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

/// Runs synth → train-dge → export-features → train-rvfl → eval in `dir`.
pub fn chain(dir: &Path, cfg: &Path) {
    let (d, c) = (s(dir), s(cfg));
    let data = dir.join("offline");
    let model = dir.join("dge");
    let stream = dir.join("stream-break.json");
    let scen = ["--scenario", "variable-torque"];
    ok(&[&["synth", "--config", c, "--out", d][..], &scen].concat());
    ok(&[&["train-dge", "--config", c, "--data", s(&data), "--out", d][..], &scen].concat());
    ok(&[
        "export-features",
        "--config",
        c,
        "--data",
        s(&data),
        "--model",
        s(&model),
        "--out",
        d,
    ]);
    let features = dir.join("features.csv");
    ok(&[
        &["train-rvfl", "--config", c, "--features", s(&features), "--out", d][..],
        &scen,
    ]
    .concat());
    ok(&[
        &["train-rvfl", "--config", c, "--data", s(&data), "--out", d][..],
        &scen,
    ]
    .concat());
    let eval = [
        "eval",
        "--config",
        c,
        "--stream",
        s(&stream),
        "--data",
        s(&data),
        "--out",
        d,
    ];
    ok(&[&eval[..], &["--pipeline", "e2e", "--model", s(&model)]].concat());
    let rvfl = dir.join("rvfl");
    ok(&[
        &eval[..],
        &["--pipeline", "two-stage", "--model", s(&model), "--rvfl", s(&rvfl)],
    ]
    .concat());
    let raw = dir.join("raw-rvfl");
    ok(&[&eval[..], &["--pipeline", "raw-rvfl", "--rvfl", s(&raw)]].concat());
}

/// Every regular file in `dir` except the input config, sorted by name.
pub fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && !p.ends_with("tiny.toml"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}
