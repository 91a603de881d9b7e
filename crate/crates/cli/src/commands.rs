use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use faultdg_core::experiment::{self, offline_dataset, raw_features, train_encoder, ExperimentConfig};
use faultdg_core::mldg::steps_per_epoch;
use faultdg_core::models::Model;
use faultdg_core::rvfl::{rvfl_train, RvflConfig, RvflModel};
use faultdg_core::signal::{
    read_dataset, write_dataset, write_mcc5_csv, DatasetSidecar, Standardizer, WindowedDataset,
};
use faultdg_core::sim::FaultClass;
use faultdg_core::stream::{
    build_scenario, export_features as write_features, parse_features_csv, FeatureCache, Pipeline, PipelineKind,
    PreparedStream, ScenarioKind, StreamDescriptor,
};
use serde_json::json;

use crate::manifest::Recorder;
use crate::Common;

/// File config (or defaults) with command-line overrides applied.
pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.per_class {
        cfg.per_class = n;
    }
    if let Some(mode) = common.meta_mode {
        cfg.train.meta_mode = mode;
    }
    if let Some(e) = common.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = common.lr {
        cfg.train.lr = lr;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn config_json(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    prefix.with_extension(ext)
}

/// Reads a dataset after checking both files against their manifests.
fn read_inputs_dataset(rec: &mut Recorder, prefix: &Path) -> Result<(WindowedDataset, Standardizer)> {
    rec.input(&with_ext(prefix, "json"))?;
    rec.input(&with_ext(prefix, "bin"))?;
    let (ds, st) = read_dataset(prefix).with_context(|| format!("loading dataset {}", prefix.display()))?;
    let st = match st {
        Some(st) => st,
        None => Standardizer::fit(&ds)?,
    };
    Ok((ds, st))
}

fn read_model(rec: &mut Recorder, prefix: &Path) -> Result<Model> {
    rec.input(&with_ext(prefix, "json"))?;
    rec.input(&with_ext(prefix, "bin"))?;
    Model::load(prefix).with_context(|| format!("loading encoder checkpoint {}", prefix.display()))
}

fn read_rvfl(rec: &mut Recorder, prefix: &Path) -> Result<RvflModel> {
    rec.input(&with_ext(prefix, "json"))?;
    rec.input(&with_ext(prefix, "bin"))?;
    RvflModel::load(prefix).with_context(|| format!("loading rvfl checkpoint {}", prefix.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn synth(common: &Common, kind: ScenarioKind, fault: Option<FaultClass>, stream_csv: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let mut rec = Recorder::new(&common.out, "synth")?;
    let raw = offline_dataset(&cfg, kind)?;
    let st = Standardizer::fit(&raw)?;
    let (bin, json_path) = write_dataset(&rec.out("offline"), &raw, Some(&st))?;
    rec.output(&json_path)?;
    rec.output(&bin)?;
    println!(
        "offline dataset: n={} ({} conditions x {} classes x {} per class), window {}, stride {}",
        raw.len(),
        raw.num_domains,
        raw.num_classes,
        cfg.per_class,
        raw.window_length,
        raw.stride
    );
    let faults = match fault {
        Some(f) => vec![f],
        None => FaultClass::FAULTS.to_vec(),
    };
    let mut stream_seeds = serde_json::Map::new();
    for f in faults {
        let scenario = build_scenario(kind, f, &cfg.stream)?;
        let desc = StreamDescriptor::new(scenario, cfg.sim.clone(), cfg.stream_seed(kind, f));
        let path = rec.out(&format!("stream-{f}.json"));
        fs::write(&path, desc.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        rec.output(&path)?;
        if stream_csv {
            let signal = desc.scenario.synthesize(&desc.sim, desc.seed)?;
            let csv_path = rec.out(&format!("stream-{f}.csv"));
            let mut w = create(&csv_path)?;
            let (m1, _) = kind.conditions();
            write_mcc5_csv(&signal, m1.speed_rpm, m1.torque_nm, &mut w)?;
            w.flush().with_context(|| format!("writing {}", csv_path.display()))?;
            rec.output(&csv_path)?;
        }
        stream_seeds.insert(f.to_string(), json!(desc.seed));
        println!(
            "stream {f}: {} windows, onset at {}",
            desc.scenario.len(),
            desc.scenario.fault_onset_index
        );
    }
    let cfg_path = rec.out("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).with_context(|| format!("writing {}", cfg_path.display()))?;
    rec.output(&cfg_path)?;
    let seeds = json!({ "root": cfg.seed, "offline": cfg.seeds(kind).data, "streams": stream_seeds });
    rec.finish("synth", config_json(&cfg)?, seeds)?;
    Ok(())
}

pub fn train_dge(common: &Common, data: &Path, kind: ScenarioKind) -> Result<()> {
    let cfg = load_config(common)?;
    let mut rec = Recorder::new(&common.out, "train-dge")?;
    let (ds, st) = read_inputs_dataset(&mut rec, data)?;
    ensure!(
        ds.window_length == cfg.model.window_length && ds.channels() == cfg.model.in_channels,
        "{}: windows are {}x{}, the model expects {}x{}",
        data.display(),
        ds.channels(),
        ds.window_length,
        cfg.model.in_channels,
        cfg.model.window_length
    );
    let standardized = st.apply(&ds)?;
    drop(ds);
    let steps = steps_per_epoch(standardized.len(), cfg.train.batch_size, standardized.num_domains);
    let mut progress = |epoch: usize, step: usize, r: &faultdg_core::mldg::StepReport| {
        if step + 1 == steps {
            eprintln!(
                "epoch {epoch}: L_mtrain {:.4}, L_mtest {:.4}, |g| {:.3e}",
                r.l_mtrain, r.l_mtest, r.grad_norm
            );
        }
    };
    let (model, history) = train_encoder(&cfg, kind, &standardized, Some(&mut progress))?;
    let (json_path, bin) = model.save(&rec.out("dge"))?;
    rec.output(&json_path)?;
    rec.output(&bin)?;
    let hist_path = rec.out("history.csv");
    let mut w = create(&hist_path)?;
    history.write_csv(&mut w)?;
    w.flush()?;
    rec.output(&hist_path)?;
    let seeds = cfg.seeds(kind);
    rec.finish(
        "train-dge",
        config_json(&cfg)?,
        json!({ "root": cfg.seed, "init": seeds.init, "mldg": seeds.train }),
    )?;
    println!(
        "trained {} epochs; checkpoint {}",
        cfg.train.epochs,
        json_path.display()
    );
    Ok(())
}

pub fn export_features(common: &Common, data: &Path, model: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let mut rec = Recorder::new(&common.out, "export-features")?;
    let (ds, st) = read_inputs_dataset(&mut rec, data)?;
    let model = read_model(&mut rec, model)?;
    let standardized = st.apply(&ds)?;
    let path = rec.out("features.csv");
    let mut w = create(&path)?;
    write_features(&model.cfg, &model.encoder, &standardized, &mut w)?;
    w.flush()?;
    rec.output(&path)?;
    rec.finish("export-features", config_json(&cfg)?, json!({ "root": cfg.seed }))?;
    println!(
        "{} rows x {} columns -> {}",
        standardized.len(),
        model.cfg.feature_dim + 2,
        path.display()
    );
    Ok(())
}

pub fn train_rvfl(common: &Common, features: Option<&Path>, data: Option<&Path>, kind: ScenarioKind) -> Result<()> {
    let cfg = load_config(common)?;
    let seeds = cfg.seeds(kind);
    let mut rec = Recorder::new(&common.out, "train-rvfl")?;
    match (features, data) {
        (Some(path), None) => {
            rec.input(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let (fm, _) = parse_features_csv(&text, &path.display().to_string(), FaultClass::ALL.len())?;
            fit_and_save(rec, &cfg, "rvfl", &fm, seeds.rvfl)
        }
        (None, Some(prefix)) => {
            let (ds, st) = read_inputs_dataset(&mut rec, prefix)?;
            let fm = raw_features(&st.apply(&ds)?)?;
            fit_and_save(rec, &cfg, "raw-rvfl", &fm, seeds.raw_rvfl)
        }
        _ => bail!("train-rvfl needs exactly one of --features or --data"),
    }
}

fn fit_and_save(
    mut rec: Recorder,
    cfg: &ExperimentConfig,
    name: &str,
    fm: &faultdg_core::rvfl::FeatureMatrix,
    seed: u64,
) -> Result<()> {
    let rcfg = RvflConfig {
        seed,
        ..cfg.rvfl.clone()
    };
    let model = rvfl_train(fm, &rcfg)?;
    let (json_path, bin) = model.save(&rec.out(name))?;
    rec.output(&json_path)?;
    rec.output(&bin)?;
    rec.finish(
        &format!("train-{name}"),
        config_json(cfg)?,
        json!({ "root": cfg.seed, "rvfl": seed }),
    )?;
    println!(
        "{name}: J={} Q={} V={} sigma={} on {} rows -> {}",
        model.input_dim(),
        model.hidden(),
        model.num_classes(),
        model.sigma,
        fm.len(),
        json_path.display()
    );
    Ok(())
}

pub fn eval(
    common: &Common,
    stream: &Path,
    kind: PipelineKind,
    data: &Path,
    model: Option<&Path>,
    rvfl: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let mut rec = Recorder::new(&common.out, "eval")?;
    rec.input(stream)?;
    let bytes = fs::read(stream).with_context(|| format!("reading {}", stream.display()))?;
    let desc = StreamDescriptor::from_json_bytes(&bytes).with_context(|| format!("{}", stream.display()))?;
    let side_path = with_ext(data, "json");
    rec.input(&side_path)?;
    let side =
        DatasetSidecar::from_json_bytes(&fs::read(&side_path)?).with_context(|| format!("{}", side_path.display()))?;
    let Some(st) = side.standardizer else {
        bail!("{}: dataset carries no standardizer", side_path.display());
    };
    let window = desc.scenario.window;
    let pipeline = match (kind, model, rvfl) {
        (PipelineKind::EndToEnd, Some(m), None) => Pipeline::EndToEnd {
            model: read_model(&mut rec, m)?,
        },
        (PipelineKind::TwoStage, Some(m), Some(r)) => {
            let model = read_model(&mut rec, m)?;
            let rvfl = read_rvfl(&mut rec, r)?;
            ensure!(
                rvfl.input_dim() == model.cfg.feature_dim,
                "{}: rvfl expects {} inputs but the encoder emits {}",
                r.display(),
                rvfl.input_dim(),
                model.cfg.feature_dim
            );
            Pipeline::TwoStage { model, rvfl }
        }
        (PipelineKind::RawRvfl, None, Some(r)) => {
            let rvfl = read_rvfl(&mut rec, r)?;
            let channels = st.channels();
            ensure!(
                rvfl.input_dim() == channels * window,
                "{}: rvfl expects {} inputs, raw windows have {channels}x{window}",
                r.display(),
                rvfl.input_dim()
            );
            Pipeline::RawRvfl { rvfl, channels, window }
        }
        (PipelineKind::EndToEnd, _, _) => bail!("pipeline e2e takes --model and no --rvfl"),
        (PipelineKind::TwoStage, _, _) => bail!("pipeline two-stage takes both --model and --rvfl"),
        (PipelineKind::RawRvfl, _, _) => bail!("pipeline raw-rvfl takes --rvfl and no --model"),
    };
    if let Pipeline::EndToEnd { model } | Pipeline::TwoStage { model, .. } = &pipeline {
        ensure!(
            model.cfg.window_length == window,
            "{}: stream windows are {window} samples, the encoder expects {}",
            stream.display(),
            model.cfg.window_length
        );
    }
    let prepared = PreparedStream::new(&desc.scenario, &desc.sim, &st, desc.seed)?;
    let series = prepared.evaluate(&pipeline, &mut FeatureCache::default())?;
    let stem = format!("eval-{}-{}-{kind}", desc.scenario.kind, desc.scenario.fault);
    let curve = rec.out(&format!("{stem}.csv"));
    let mut w = create(&curve)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    rec.output(&curve)?;
    let summary = rec.out(&format!("{stem}.summary.json"));
    let body = json!({
        "pipeline": kind.to_string(),
        "scenario": desc.scenario.kind.to_string(),
        "fault": desc.scenario.fault.to_string(),
        "windows": series.values.len(),
        "final_accuracy": series.final_accuracy(),
        "segments": series.segments,
    });
    fs::write(&summary, serde_json::to_string_pretty(&body)? + "\n")
        .with_context(|| format!("writing {}", summary.display()))?;
    rec.output(&summary)?;
    rec.finish(&stem, config_json(&cfg)?, json!({ "stream": desc.seed }))?;
    println!(
        "{} {} {kind}: final cumulative accuracy {:.4}",
        desc.scenario.kind,
        desc.scenario.fault,
        series.final_accuracy()
    );
    Ok(())
}

fn or_all<T: Copy>(given: &[T], all: &[T]) -> Vec<T> {
    if given.is_empty() { all } else { given }.to_vec()
}

pub fn compare(
    common: &Common,
    scenarios: &[ScenarioKind],
    faults: &[FaultClass],
    pipelines: &[PipelineKind],
    seeds: u64,
    threads: usize,
) -> Result<()> {
    let cfg = load_config(common)?;
    ensure!(seeds > 0, "--seeds must be at least 1");
    ensure!(
        !faults.contains(&FaultClass::Healthy),
        "--fault takes wear, break or crack"
    );
    let scenarios: Vec<ScenarioKind> = or_all(scenarios, &ScenarioKind::ALL);
    let faults: Vec<FaultClass> = or_all(faults, &FaultClass::FAULTS);
    let pipelines: Vec<PipelineKind> = or_all(pipelines, &PipelineKind::ALL);
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut rec = Recorder::new(&common.out, "compare")?;
    let report = experiment::compare(&cfg, &scenarios, &faults, &pipelines, &seed_list, threads, |r| {
        eprintln!(
            "seed {} {} {} {}: {:.4}",
            r.seed, r.scenario, r.fault, r.pipeline, r.final_accuracy
        )
    })?;
    let rows = rec.out("compare.csv");
    let mut w = create(&rows)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    rec.output(&rows)?;
    let medians = rec.out("compare-medians.csv");
    let mut w = create(&medians)?;
    report.write_medians_csv(&mut w)?;
    w.flush()?;
    rec.output(&medians)?;
    rec.finish("compare", config_json(&cfg)?, json!({ "seeds": seed_list }))?;
    println!("median final cumulative accuracy over {seeds} seeds:");
    for (p, s, f) in report.cells() {
        if let Some(m) = report.median(p, s, f) {
            println!("  {s:<16} {f:<6} {p:<10} {m:.4}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(out: &Path) -> Common {
        Common {
            config: None,
            seed: None,
            out: out.to_path_buf(),
            per_class: None,
            meta_mode: None,
            epochs: None,
            lr: None,
        }
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 7\nper_class = 30\n[train]\nepochs = 3\n").unwrap();
        let mut c = common(dir.path());
        c.config = Some(path);
        let from_file = load_config(&c).unwrap();
        assert_eq!(
            (from_file.seed, from_file.per_class, from_file.train.epochs),
            (7, 30, 3)
        );
        assert_eq!(from_file.train.lr, ExperimentConfig::default().train.lr);
        c.seed = Some(9);
        c.epochs = Some(1);
        c.lr = Some(0.5);
        let flagged = load_config(&c).unwrap();
        assert_eq!((flagged.seed, flagged.per_class, flagged.train.epochs), (9, 30, 1));
        assert_eq!(flagged.train.lr, 0.5);
    }

    #[test]
    fn bad_config_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.toml");
        fs::write(&path, "seed = \"x\"\n").unwrap();
        let mut c = common(dir.path());
        c.config = Some(path);
        let err = format!("{:#}", load_config(&c).unwrap_err());
        assert!(err.contains("broken.toml"), "{err}");
        c.config = None;
        c.per_class = Some(0);
        assert!(load_config(&c).is_err());
    }
}
