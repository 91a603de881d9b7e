//! Online scenario replay and cumulative-accuracy evaluation.
//!
//! A scenario is three steady segments `M1 → M2 → M1` measured in windows.
//! The stream starts healthy; the fault begins at a window index inside the
//! `M2` segment and persists to the end.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax_rows, encode_strided, encoder_forward, head_forward, EncoderParams, Model, ModelConfig};
use crate::rng::derive_seed;
use crate::rvfl::{FeatureMatrix, RvflModel};
use crate::signal::{
    assemble_offline, AssemblySpec, LabeledSignal, MultichannelSignal, Segmentation, Standardizer, WindowedDataset,
};
use crate::sim::{synth_samples, ConditionSpec, FaultClass, SimConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    VariableSpeed,
    VariableTorque,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 2] = [ScenarioKind::VariableSpeed, ScenarioKind::VariableTorque];

    /// `(M1, M2)` operating conditions.
    pub fn conditions(self) -> (ConditionSpec, ConditionSpec) {
        match self {
            ScenarioKind::VariableSpeed => (
                ConditionSpec {
                    speed_rpm: 2000.0,
                    torque_nm: 20.0,
                },
                ConditionSpec {
                    speed_rpm: 1500.0,
                    torque_nm: 20.0,
                },
            ),
            ScenarioKind::VariableTorque => (
                ConditionSpec {
                    speed_rpm: 1000.0,
                    torque_nm: 20.0,
                },
                ConditionSpec {
                    speed_rpm: 1000.0,
                    torque_nm: 15.0,
                },
            ),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::VariableSpeed => "variable-speed",
            ScenarioKind::VariableTorque => "variable-torque",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variable-speed" | "variable_speed" => Ok(ScenarioKind::VariableSpeed),
            "variable-torque" | "variable_torque" => Ok(ScenarioKind::VariableTorque),
            other => Err(Error::Invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Windows in the M1, M2 and returning M1 segments.
    pub segment_windows: [usize; 3],
    /// Fault onset, counted in windows from the start of M2.
    pub onset_in_m2: usize,
    pub window: usize,
    pub stride: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            segment_windows: [6000, 10000, 6000],
            onset_in_m2: 4984,
            window: 1024,
            stride: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub condition: ConditionSpec,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamScenario {
    pub kind: ScenarioKind,
    pub fault: FaultClass,
    pub segments: Vec<Segment>,
    /// Global window index of the first faulty window.
    pub fault_onset_index: usize,
    pub window: usize,
    pub stride: usize,
}

pub fn build_scenario(kind: ScenarioKind, fault: FaultClass, cfg: &StreamConfig) -> Result<StreamScenario> {
    if fault == FaultClass::Healthy {
        return Err(Error::Invalid("a stream scenario needs a fault class".into()));
    }
    let [a, b, c] = cfg.segment_windows;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Invalid(format!(
            "segment lengths must be >= 1, got {:?}",
            cfg.segment_windows
        )));
    }
    if cfg.onset_in_m2 >= b {
        return Err(Error::Invalid(format!(
            "onset {} does not fall inside an M2 segment of {b} windows",
            cfg.onset_in_m2
        )));
    }
    if cfg.window == 0 || cfg.stride == 0 {
        return Err(Error::Invalid("window and stride must be positive".into()));
    }
    let (m1, m2) = kind.conditions();
    Ok(StreamScenario {
        kind,
        fault,
        segments: vec![
            Segment {
                condition: m1,
                windows: a,
            },
            Segment {
                condition: m2,
                windows: b,
            },
            Segment {
                condition: m1,
                windows: c,
            },
        ],
        fault_onset_index: a + cfg.onset_in_m2,
        window: cfg.window,
        stride: cfg.stride,
    })
}

impl StreamScenario {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.windows).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ground truth for window `i`.
    pub fn label_at(&self, i: usize) -> FaultClass {
        if i < self.fault_onset_index {
            FaultClass::Healthy
        } else {
            self.fault
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label_at(i).index()).collect()
    }

    /// `[start, end)` window ranges of the segments.
    pub fn segment_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let r = (start, start + s.windows);
                start += s.windows;
                r
            })
            .collect()
    }

    /// Samples needed to cover every window.
    pub fn signal_len(&self) -> usize {
        Segmentation::span(self.len(), self.window, self.stride)
    }

    /// Generates the stream: one recording per steady piece, concatenated.
    ///
    /// Piece boundaries fall at the first sample of the boundary window, so a
    /// few windows before each boundary straddle two pieces.
    pub fn synthesize(&self, sim: &SimConfig, seed: u64) -> Result<MultichannelSignal> {
        let ranges = self.segment_ranges();
        let mut pieces: Vec<(ConditionSpec, FaultClass, usize)> = Vec::new();
        for (seg, &(start, end)) in self.segments.iter().zip(&ranges) {
            let onset = self.fault_onset_index;
            if onset > start && onset < end {
                pieces.push((seg.condition, FaultClass::Healthy, start));
                pieces.push((seg.condition, self.fault, onset));
            } else {
                pieces.push((seg.condition, self.label_at(start), start));
            }
        }
        let total = self.signal_len();
        let channels = crate::signal::VIBRATION_CHANNELS;
        let mut data = vec![Vec::with_capacity(total); channels];
        let mut names = Vec::new();
        for (k, &(cond, fault, first_window)) in pieces.iter().enumerate() {
            let from = first_window * self.stride;
            let to = pieces.get(k + 1).map_or(total, |p| p.2 * self.stride);
            let cfg = sim.with_seed(derive_seed(seed, &format!("stream.piece{k}")));
            let s = synth_samples(&cond, fault, to - from, &cfg)?;
            for (c, d) in data.iter_mut().enumerate() {
                d.extend_from_slice(s.channel(c));
            }
            names = s.channel_names.clone();
        }
        let flat: Vec<f64> = data.concat();
        MultichannelSignal::new(
            crate::signal::SAMPLE_RATE_HZ,
            names,
            Tensor::new(vec![channels, total], flat)?,
        )
    }
}

/// Offline training windows: one recording per (condition, class), domain
/// index = position in `conditions`, class index = fault class index.
pub fn synth_offline(
    conditions: &[ConditionSpec],
    per_class: usize,
    window: usize,
    stride: usize,
    sim: &SimConfig,
    seed: u64,
) -> Result<WindowedDataset> {
    if per_class == 0 {
        return Err(Error::Invalid("per_class must be positive".into()));
    }
    let len = Segmentation::span(per_class, window, stride);
    let mut entries = Vec::new();
    for (d, cond) in conditions.iter().enumerate() {
        for fault in FaultClass::ALL {
            let cfg = sim.with_seed(derive_seed(seed, &format!("offline.d{d}.c{}", fault.index())));
            entries.push(LabeledSignal {
                domain: d,
                class: fault.index(),
                signal: synth_samples(cond, fault, len, &cfg)?,
            });
        }
    }
    let spec = AssemblySpec {
        window,
        stride,
        per_class,
        num_classes: FaultClass::ALL.len(),
        num_domains: conditions.len(),
    };
    assemble_offline(&entries, &spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    #[serde(rename = "e2e")]
    EndToEnd,
    TwoStage,
    RawRvfl,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] = [PipelineKind::EndToEnd, PipelineKind::TwoStage, PipelineKind::RawRvfl];
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::EndToEnd => "e2e",
            PipelineKind::TwoStage => "two-stage",
            PipelineKind::RawRvfl => "raw-rvfl",
        })
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e2e" | "end-to-end" => Ok(PipelineKind::EndToEnd),
            "two-stage" | "two_stage" => Ok(PipelineKind::TwoStage),
            "raw-rvfl" | "raw_rvfl" => Ok(PipelineKind::RawRvfl),
            other => Err(Error::Invalid(format!("unknown pipeline `{other}`"))),
        }
    }
}

/// A trained classifier that can label every window of a stream.
#[derive(Clone, Debug, PartialEq)]
pub enum Pipeline {
    EndToEnd {
        model: Model,
    },
    TwoStage {
        model: Model,
        rvfl: RvflModel,
    },
    RawRvfl {
        rvfl: RvflModel,
        channels: usize,
        window: usize,
    },
}

impl Pipeline {
    pub fn kind(&self) -> PipelineKind {
        match self {
            Pipeline::EndToEnd { .. } => PipelineKind::EndToEnd,
            Pipeline::TwoStage { .. } => PipelineKind::TwoStage,
            Pipeline::RawRvfl { .. } => PipelineKind::RawRvfl,
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Pipeline::TwoStage { model, rvfl } if rvfl.input_dim() != model.cfg.feature_dim => Err(Error::shape(
                "two-stage pipeline",
                format!(
                    "rvfl expects {} features, encoder gives {}",
                    rvfl.input_dim(),
                    model.cfg.feature_dim
                ),
            )),
            Pipeline::RawRvfl { rvfl, channels, window } if rvfl.input_dim() != channels * window => Err(Error::shape(
                "raw-rvfl pipeline",
                format!(
                    "rvfl expects {} inputs, windows have {}",
                    rvfl.input_dim(),
                    channels * window
                ),
            )),
            _ => Ok(()),
        }
    }
}

/// Anything that labels the windows of a standardized stream.
pub trait StreamPredictor {
    fn predict_stream(&self, input: &StreamInput<'_>, cache: &mut FeatureCache) -> Result<Vec<usize>>;
}

/// A standardized stream and its window lattice.
pub struct StreamInput<'a> {
    pub signal: &'a MultichannelSignal,
    pub window: usize,
    pub stride: usize,
    pub count: usize,
}

/// Encoder features already computed for the current stream.
#[derive(Default)]
pub struct FeatureCache {
    entries: Vec<(ModelConfig, EncoderParams, Tensor)>,
}

impl FeatureCache {
    fn features(&mut self, cfg: &ModelConfig, enc: &EncoderParams, input: &StreamInput<'_>) -> Result<&Tensor> {
        if let Some(i) = self.entries.iter().position(|(c, e, _)| c == cfg && e == enc) {
            return Ok(&self.entries[i].2);
        }
        let z = stream_features(cfg, enc, input)?;
        self.entries.push((cfg.clone(), enc.clone(), z));
        Ok(&self.entries.last().expect("just pushed").2)
    }
}

/// Encoder features for every window of a stream.
pub fn stream_features(cfg: &ModelConfig, enc: &EncoderParams, input: &StreamInput<'_>) -> Result<Tensor> {
    if input.window != cfg.window_length {
        return Err(Error::shape(
            "stream features",
            format!("stream window {} vs encoder window {}", input.window, cfg.window_length),
        ));
    }
    if input.stride % cfg.pool_size == 0 {
        return encode_strided(cfg, enc, input.signal, input.stride, input.count);
    }
    let mut out = Vec::with_capacity(input.count * cfg.feature_dim);
    for_each_block(input, 256, |batch| {
        out.extend_from_slice(encoder_forward(cfg, enc, batch)?.data());
        Ok(())
    })?;
    Tensor::new(vec![input.count, cfg.feature_dim], out)
}

/// Calls `f` on consecutive `[b, C, W]` blocks of stream windows.
fn for_each_block(input: &StreamInput<'_>, block: usize, mut f: impl FnMut(&Tensor) -> Result<()>) -> Result<()> {
    let c = input.signal.channels();
    let mut buf = Vec::new();
    let mut start = 0;
    while start < input.count {
        let n = block.min(input.count - start);
        buf.clear();
        for i in start..start + n {
            input.signal.copy_window(i * input.stride, input.window, &mut buf);
        }
        f(&Tensor::new(vec![n, c, input.window], std::mem::take(&mut buf))?)?;
        start += n;
    }
    Ok(())
}

impl StreamPredictor for Pipeline {
    fn predict_stream(&self, input: &StreamInput<'_>, cache: &mut FeatureCache) -> Result<Vec<usize>> {
        self.check()?;
        if Segmentation::span(input.count, input.window, input.stride) > input.signal.len() {
            return Err(Error::Invalid("stream shorter than its window lattice".into()));
        }
        match self {
            Pipeline::EndToEnd { model } => {
                let z = cache.features(&model.cfg, &model.encoder, input)?;
                Ok(argmax_rows(&head_forward(&model.cfg, &model.head, z)?))
            }
            Pipeline::TwoStage { model, rvfl } => {
                let z = cache.features(&model.cfg, &model.encoder, input)?;
                crate::rvfl::rvfl_predict(rvfl, z)
            }
            Pipeline::RawRvfl { rvfl, channels, window } => {
                if *channels != input.signal.channels() || *window != input.window {
                    return Err(Error::shape(
                        "raw-rvfl pipeline",
                        format!(
                            "trained on [{channels}, {window}] windows, stream has [{}, {}]",
                            input.signal.channels(),
                            input.window
                        ),
                    ));
                }
                let mut out = Vec::with_capacity(input.count);
                for_each_block(input, 512, |batch| {
                    let n = batch.dim(0);
                    let flat = batch.clone().reshape(&[n, channels * window])?;
                    out.extend(crate::rvfl::rvfl_predict(rvfl, &flat)?);
                    Ok(())
                })?;
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentAccuracy {
    pub start: usize,
    pub end: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumAccuracySeries {
    /// Entry `t - 1` is the accuracy over the first `t` windows.
    pub values: Vec<f64>,
    pub correct: usize,
    pub segments: Vec<SegmentAccuracy>,
}

impl CumAccuracySeries {
    pub fn final_accuracy(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "index,cumulative_accuracy")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, v)?;
        }
        Ok(())
    }
}

/// Cumulative accuracy of `predicted` against `truth` with per-range totals.
pub fn cumulative_accuracy(
    predicted: &[usize],
    truth: &[usize],
    ranges: &[(usize, usize)],
) -> Result<CumAccuracySeries> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(
            "cumulative accuracy",
            format!("{} predictions for {} windows", predicted.len(), truth.len()),
        ));
    }
    let hits: Vec<bool> = predicted.iter().zip(truth).map(|(p, t)| p == t).collect();
    let mut correct = 0usize;
    let values = hits
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            correct += h as usize;
            correct as f64 / (i + 1) as f64
        })
        .collect();
    let segments = ranges
        .iter()
        .map(|&(start, end)| {
            let end = end.min(hits.len());
            let c = hits[start.min(end)..end].iter().filter(|&&h| h).count();
            SegmentAccuracy {
                start,
                end,
                correct: c,
                accuracy: if end > start {
                    c as f64 / (end - start) as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    Ok(CumAccuracySeries {
        values,
        correct,
        segments,
    })
}

/// A generated stream after offline standardization.
pub struct PreparedStream {
    pub scenario: StreamScenario,
    pub signal: MultichannelSignal,
}

impl PreparedStream {
    pub fn new(scenario: &StreamScenario, sim: &SimConfig, standardizer: &Standardizer, seed: u64) -> Result<Self> {
        let raw = scenario.synthesize(sim, seed)?;
        Ok(Self {
            scenario: scenario.clone(),
            signal: standardizer.apply_signal(&raw)?,
        })
    }

    pub fn input(&self) -> StreamInput<'_> {
        StreamInput {
            signal: &self.signal,
            window: self.scenario.window,
            stride: self.scenario.stride,
            count: self.scenario.len(),
        }
    }

    /// Predicts every window in order and scores it; the predictor is only read.
    pub fn evaluate(&self, predictor: &dyn StreamPredictor, cache: &mut FeatureCache) -> Result<CumAccuracySeries> {
        let pred = predictor.predict_stream(&self.input(), cache)?;
        cumulative_accuracy(&pred, &self.scenario.labels(), &self.scenario.segment_ranges())
    }
}

/// Generates the scenario stream from `seed` and evaluates one predictor.
pub fn run_stream(
    predictor: &dyn StreamPredictor,
    scenario: &StreamScenario,
    sim: &SimConfig,
    standardizer: &Standardizer,
    seed: u64,
) -> Result<CumAccuracySeries> {
    let stream = PreparedStream::new(scenario, sim, standardizer, seed)?;
    stream.evaluate(predictor, &mut FeatureCache::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub pipeline: PipelineKind,
    pub scenario: ScenarioKind,
    pub fault: FaultClass,
    pub seed: u64,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    /// Median final accuracy of one (pipeline, scenario, fault) cell.
    pub fn median(&self, pipeline: PipelineKind, scenario: ScenarioKind, fault: FaultClass) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.pipeline == pipeline && r.scenario == scenario && r.fault == fault)
            .map(|r| r.final_accuracy)
            .collect();
        median(vals)
    }

    /// Distinct (pipeline, scenario, fault) cells in first-seen order.
    pub fn cells(&self) -> Vec<(PipelineKind, ScenarioKind, FaultClass)> {
        let mut out = Vec::new();
        for r in &self.rows {
            let key = (r.pipeline, r.scenario, r.fault);
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "pipeline,scenario,fault,seed,final_accuracy")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.pipeline, r.scenario, r.fault, r.seed, r.final_accuracy
            )?;
        }
        Ok(())
    }

    pub fn write_medians_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "pipeline,scenario,fault,median_final_accuracy")?;
        for (p, s, f) in self.cells() {
            let m = self.median(p, s, f).unwrap_or(f64::NAN);
            writeln!(out, "{p},{s},{f},{m}")?;
        }
        Ok(())
    }
}

pub fn median(mut vals: Vec<f64>) -> Option<f64> {
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Some(if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    })
}

/// Features of every dataset row as CSV: `f0..f63,class,domain`.
pub fn export_features<W: Write>(
    cfg: &ModelConfig,
    encoder: &EncoderParams,
    dataset: &WindowedDataset,
    out: &mut W,
) -> Result<()> {
    let io = |e: std::io::Error| Error::Invalid(format!("writing features: {e}"));
    let header: Vec<String> = (0..cfg.feature_dim).map(|i| format!("f{i}")).collect();
    writeln!(out, "{},class,domain", header.join(",")).map_err(io)?;
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let rows: Vec<usize> = (start..(start + 256).min(n)).collect();
        let (x, _) = dataset.batch(&rows);
        let z = encoder_forward(cfg, encoder, &x)?;
        for (k, &r) in rows.iter().enumerate() {
            let mut line = String::new();
            for v in z.row(k) {
                line.push_str(&v.to_string());
                line.push(',');
            }
            writeln!(
                out,
                "{line}{},{}",
                dataset.class_labels()[r],
                dataset.domain_labels()[r]
            )
            .map_err(io)?;
        }
        start += rows.len();
    }
    Ok(())
}

pub const STREAM_FORMAT: &str = "faultdg.stream/1";

/// Everything needed to regenerate a stream exactly: the scenario layout,
/// the simulator settings and the stream seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub format: String,
    pub scenario: StreamScenario,
    pub sim: SimConfig,
    pub seed: u64,
}

impl StreamDescriptor {
    pub fn new(scenario: StreamScenario, sim: SimConfig, seed: u64) -> Self {
        Self {
            format: STREAM_FORMAT.into(),
            scenario,
            sim,
            seed,
        }
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let d: Self = serde_json::from_slice(bytes)?;
        if d.format != STREAM_FORMAT {
            return Err(Error::Format(format!("unknown stream format `{}`", d.format)));
        }
        d.scenario.validate()?;
        d.sim.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

impl StreamScenario {
    /// Structural checks for a scenario read from disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("stream scenario: {m}")));
        if self.segments.is_empty() || self.segments.iter().any(|s| s.windows == 0) {
            return bad("every segment needs at least one window".into());
        }
        if self.window == 0 || self.stride == 0 {
            return bad("window and stride must be positive".into());
        }
        if self.fault == FaultClass::Healthy {
            return bad("the scenario fault must not be healthy".into());
        }
        for seg in &self.segments {
            seg.condition.validate()?;
        }
        let len = self
            .segments
            .iter()
            .try_fold(0usize, |a, s| a.checked_add(s.windows))
            .ok_or_else(|| Error::Format("stream scenario: window count overflows".into()))?;
        if self.fault_onset_index >= len {
            return bad(format!(
                "onset {} is past the last window {}",
                self.fault_onset_index,
                len - 1
            ));
        }
        (len - 1)
            .checked_mul(self.stride)
            .and_then(|v| v.checked_add(self.window))
            .ok_or_else(|| Error::Format("stream scenario: sample count overflows".into()))?;
        Ok(())
    }
}

/// Reads the `f0..f{J-1},class,domain` layout written by [`export_features`].
pub fn parse_features_csv(text: &str, source: &str, num_classes: usize) -> Result<(FeatureMatrix, Vec<usize>)> {
    let err = |row: usize, msg: String| Error::Parse {
        source_name: source.to_string(),
        row,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[cols.len() - 2..] != ["class", "domain"] {
        return Err(err(1, "header must end with `class,domain`".into()));
    }
    let dim = cols.len() - 2;
    for (j, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(err(1, format!("column {j} is `{c}`, expected `f{j}`")));
        }
    }
    let mut z = Vec::new();
    let (mut classes, mut domains) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(err(row, format!("{} fields, expected {}", fields.len(), dim + 2)));
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| err(row, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(row, format!("non-finite feature `{f}`")));
            }
            z.push(v);
        }
        let class: usize = fields[dim]
            .parse()
            .map_err(|_| err(row, format!("bad class `{}`", fields[dim])))?;
        if class >= num_classes {
            return Err(err(
                row,
                format!("class {class} out of range for {num_classes} classes"),
            ));
        }
        let domain: usize = fields[dim + 1]
            .parse()
            .map_err(|_| err(row, format!("bad domain `{}`", fields[dim + 1])))?;
        classes.push(class);
        domains.push(domain);
    }
    if classes.is_empty() {
        return Err(err(1, "no feature rows".into()));
    }
    let n = classes.len();
    let fm = FeatureMatrix::new(Tensor::new(vec![n, dim], z)?, classes, num_classes)?;
    Ok((fm, domains))
}
