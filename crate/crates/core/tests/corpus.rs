//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets drive, so parser regressions surface on stable toolchains.

use std::fs;
use std::path::PathBuf;

use faultdg_core::experiment::ExperimentConfig;
use faultdg_core::params::CheckpointManifest;
use faultdg_core::signal::{parse_mcc5_csv, ColumnMap, DatasetSidecar};
use faultdg_core::stream::{parse_features_csv, StreamDescriptor};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn split_nul(data: &[u8]) -> (&[u8], &[u8]) {
    let at = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    (&data[..at], data.get(at + 1..).unwrap_or(&[]))
}

fn outcome<T, E>(r: Result<T, E>) -> &'static str {
    if r.is_ok() {
        "ok"
    } else {
        "err"
    }
}

#[test]
fn mcc5_csv_seeds() {
    let map = ColumnMap::default();
    for (name, data) in seeds("mcc5_csv") {
        let text = std::str::from_utf8(&data).unwrap();
        let got = outcome(parse_mcc5_csv(text, &name, false, &map));
        let want = if matches!(name.as_str(), "header" | "no_header") {
            "ok"
        } else {
            "err"
        };
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn features_csv_seeds() {
    for (name, data) in seeds("features_csv") {
        let text = std::str::from_utf8(&data).unwrap();
        let got = parse_features_csv(text, &name, 4);
        match name.as_str() {
            "rows" => assert_eq!(got.unwrap().0.dim(), 64),
            "bad_class" => {
                let err = got.unwrap_err().to_string();
                assert!(err.contains("row"), "{err}");
            }
            _ => {
                let _ = got;
            }
        }
    }
}

#[test]
fn dataset_sidecar_seeds() {
    for (name, data) in seeds("dataset_sidecar") {
        let (json, payload) = split_nul(&data);
        let got = DatasetSidecar::from_json_bytes(json).and_then(|s| s.decode(payload));
        assert_eq!(outcome(got), if name == "small" { "ok" } else { "err" }, "{name}");
    }
}

#[test]
fn checkpoint_manifest_seeds() {
    for (name, data) in seeds("checkpoint_manifest") {
        let (json, payload) = split_nul(&data);
        let got = CheckpointManifest::from_json_bytes(json).and_then(|m| m.decode(payload));
        let want = if name == "bad_offset" { "err" } else { "ok" };
        assert_eq!(outcome(got), want, "{name}");
    }
}

#[test]
fn experiment_config_seeds() {
    for (name, data) in seeds("experiment_config") {
        let got = ExperimentConfig::parse(std::str::from_utf8(&data).unwrap());
        let want = if name == "unknown_key" { "err" } else { "ok" };
        if let Ok(cfg) = &got {
            assert_eq!(&ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{name}");
        }
        assert_eq!(outcome(got), want, "{name}");
    }
}

#[test]
fn stream_descriptor_seeds() {
    for (name, data) in seeds("stream_descriptor") {
        let desc = StreamDescriptor::from_json_bytes(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(
            StreamDescriptor::from_json_bytes(&desc.to_json().unwrap()).unwrap(),
            desc
        );
    }
}
