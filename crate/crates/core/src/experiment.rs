//! End-to-end experiment wiring: synthetic offline data, both training
//! stages, and stream comparison.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mldg::{train, History, TrainConfig};
use crate::models::{encoder_forward, Model, ModelConfig};
use crate::rng::derive_seed;
use crate::rvfl::{rvfl_train, FeatureMatrix, RvflConfig, RvflModel};
use crate::signal::{Standardizer, WindowedDataset};
use crate::sim::{FaultClass, SimConfig};
use crate::stream::{
    build_scenario, synth_offline, CompareReport, CompareRow, FeatureCache, Pipeline, PipelineKind, PreparedStream,
    ScenarioKind, StreamConfig,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every component seed is derived from it by label.
    pub seed: u64,
    /// Offline windows per (condition, class).
    pub per_class: usize,
    pub window: usize,
    pub stride: usize,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rvfl: RvflConfig,
    pub stream: StreamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            per_class: 1984,
            window: 1024,
            stride: 64,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            rvfl: RvflConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.per_class == 0 {
            return Err(Error::Invalid("per_class must be positive".into()));
        }
        if self.window != self.model.window_length || self.window != self.stream.window {
            return Err(Error::Invalid(format!(
                "window {} must match the model ({}) and stream ({}) windows",
                self.window, self.model.window_length, self.stream.window
            )));
        }
        if self.stride == 0 || self.stride != self.stream.stride {
            return Err(Error::Invalid(format!(
                "stride {} must be positive and match the stream stride {}",
                self.stride, self.stream.stride
            )));
        }
        if !(self.rvfl.sigma >= 0.0 && self.rvfl.sigma.is_finite()) {
            return Err(Error::Invalid(format!(
                "rvfl sigma must be >= 0, got {}",
                self.rvfl.sigma
            )));
        }
        Ok(())
    }

    /// Component seeds for one scenario, derived from the root seed.
    pub fn seeds(&self, kind: ScenarioKind) -> ScenarioSeeds {
        let s = |label: &str| derive_seed(self.seed, &format!("{label}.{kind}"));
        ScenarioSeeds {
            data: s("offline"),
            init: s("init"),
            train: s("mldg"),
            rvfl: s("rvfl"),
            raw_rvfl: s("raw-rvfl"),
        }
    }

    /// Seed of the stream for one (scenario, fault), independent of training.
    pub fn stream_seed(&self, kind: ScenarioKind, fault: FaultClass) -> u64 {
        derive_seed(self.seed, &format!("stream.{kind}.{fault}"))
    }

    /// The same config with another root seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub rvfl: u64,
    pub raw_rvfl: u64,
}

/// Offline training data for a scenario: domain 0 is M1, domain 1 is M2.
pub fn offline_dataset(cfg: &ExperimentConfig, kind: ScenarioKind) -> Result<WindowedDataset> {
    let (m1, m2) = kind.conditions();
    synth_offline(
        &[m1, m2],
        cfg.per_class,
        cfg.window,
        cfg.stride,
        &cfg.sim,
        cfg.seeds(kind).data,
    )
}

/// Everything trained for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedScenario {
    pub standardizer: Standardizer,
    pub model: Model,
    pub history: History,
    /// RVFL on frozen encoder features.
    pub rvfl: RvflModel,
    /// RVFL on flattened standardized windows.
    pub raw_rvfl: RvflModel,
}

impl TrainedScenario {
    pub fn pipeline(&self, kind: PipelineKind) -> Pipeline {
        match kind {
            PipelineKind::EndToEnd => Pipeline::EndToEnd {
                model: self.model.clone(),
            },
            PipelineKind::TwoStage => Pipeline::TwoStage {
                model: self.model.clone(),
                rvfl: self.rvfl.clone(),
            },
            PipelineKind::RawRvfl => Pipeline::RawRvfl {
                rvfl: self.raw_rvfl.clone(),
                channels: self.model.cfg.in_channels,
                window: self.model.cfg.window_length,
            },
        }
    }
}

/// Encoder features of every dataset row.
pub fn dataset_features(model: &Model, ds: &WindowedDataset) -> Result<FeatureMatrix> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let (x, labels) = ds.batch(&rows);
    let z = encoder_forward(&model.cfg, &model.encoder, &x)?;
    FeatureMatrix::new(z, labels, ds.num_classes)
}

/// Flattened windows `[n, C·W]` of every dataset row.
pub fn raw_features(ds: &WindowedDataset) -> Result<FeatureMatrix> {
    let (n, c, w) = (ds.len(), ds.channels(), ds.window_length);
    let z = Tensor::new(vec![n, c * w], ds.windows().data().to_vec())?;
    FeatureMatrix::new(z, ds.class_labels().to_vec(), ds.num_classes)
}

/// Trains the encoder and head with the meta objective (first stage).
pub fn train_encoder(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    standardized: &WindowedDataset,
    progress: Option<crate::mldg::Progress<'_>>,
) -> Result<(Model, History)> {
    let seeds = cfg.seeds(kind);
    let init = Model::init(&ModelConfig {
        seed: seeds.init,
        ..cfg.model.clone()
    })?;
    let tcfg = TrainConfig {
        seed: seeds.train,
        ..cfg.train.clone()
    };
    train(standardized, &init, &tcfg, progress)
}

/// Runs both training stages and the raw-signal baseline for a scenario.
pub fn train_scenario(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    progress: Option<crate::mldg::Progress<'_>>,
) -> Result<TrainedScenario> {
    cfg.validate()?;
    let raw = offline_dataset(cfg, kind)?;
    let standardizer = Standardizer::fit(&raw)?;
    let ds = standardizer.apply(&raw)?;
    drop(raw);
    let (model, history) = train_encoder(cfg, kind, &ds, progress)?;
    let seeds = cfg.seeds(kind);
    let rvfl = rvfl_train(
        &dataset_features(&model, &ds)?,
        &RvflConfig {
            seed: seeds.rvfl,
            ..cfg.rvfl.clone()
        },
    )?;
    let raw_rvfl = rvfl_train(
        &raw_features(&ds)?,
        &RvflConfig {
            seed: seeds.raw_rvfl,
            ..cfg.rvfl.clone()
        },
    )?;
    Ok(TrainedScenario {
        standardizer,
        model,
        history,
        rvfl,
        raw_rvfl,
    })
}

/// Final cumulative accuracy of each pipeline on each fault's stream.
pub fn evaluate_scenario(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    trained: &TrainedScenario,
    faults: &[FaultClass],
    pipelines: &[PipelineKind],
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &fault in faults {
        let scenario = build_scenario(kind, fault, &cfg.stream)?;
        let stream = PreparedStream::new(&scenario, &cfg.sim, &trained.standardizer, cfg.stream_seed(kind, fault))?;
        let mut cache = FeatureCache::default();
        for &p in pipelines {
            let series = stream.evaluate(&trained.pipeline(p), &mut cache)?;
            rows.push(CompareRow {
                pipeline: p,
                scenario: kind,
                fault,
                seed: cfg.seed,
                final_accuracy: series.final_accuracy(),
            });
        }
    }
    Ok(rows)
}

/// Trains and evaluates every (scenario, seed); rows are ordered by
/// pipeline, scenario, fault, then seed.
///
/// Cells run on up to `threads` workers (0 picks the available
/// parallelism); each cell is seeded on its own, so the report does not
/// depend on the worker count. `on_cell` sees rows in completion order.
pub fn compare(
    cfg: &ExperimentConfig,
    scenarios: &[ScenarioKind],
    faults: &[FaultClass],
    pipelines: &[PipelineKind],
    seeds: &[u64],
    threads: usize,
    on_cell: impl Fn(&CompareRow) + Sync,
) -> Result<CompareReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("compare needs at least one seed".into()));
    }
    let jobs: Vec<(ScenarioKind, u64)> = scenarios
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let workers = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<Vec<CompareRow>>)>> = Mutex::new(Vec::new());
    let run = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(kind, seed)) = jobs.get(j) else { break };
        let c = cfg.with_seed(seed);
        let out = train_scenario(&c, kind, None).and_then(|t| evaluate_scenario(&c, kind, &t, faults, pipelines));
        if let Ok(rows) = &out {
            rows.iter().for_each(&on_cell);
        }
        results.lock().expect("worker panicked").push((j, out));
    };
    std::thread::scope(|scope| {
        for _ in 1..workers {
            scope.spawn(run);
        }
        run();
    });
    let mut done = results.into_inner().expect("worker panicked");
    done.sort_by_key(|(j, _)| *j);
    let mut rows = Vec::new();
    for (_, out) in done {
        rows.extend(out?);
    }
    let order = |r: &CompareRow| {
        (
            pipelines.iter().position(|&p| p == r.pipeline),
            scenarios.iter().position(|&s| s == r.scenario),
            faults.iter().position(|&f| f == r.fault),
            seeds.iter().position(|&s| s == r.seed),
        )
    };
    rows.sort_by_key(order);
    Ok(CompareReport { rows })
}
