//! Recording ingestion, windowing, per-channel standardization and the
//! persisted dataset format.
//!
//! Recordings follow the MCC5-THU layout: eight numeric columns per row,
//! by default `speed, load, vib1_x, vib1_y, vib1_z, vib2_x, vib2_y, vib2_z`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{f64s_from_le_bytes, f64s_to_le_bytes};
use crate::tensor::Tensor;

pub const SAMPLE_RATE_HZ: f64 = 12_800.0;
pub const CSV_COLUMNS: usize = 8;
pub const VIBRATION_CHANNELS: usize = 6;

pub const DEFAULT_COLUMN_NAMES: [&str; CSV_COLUMNS] = [
    "speed", "load", "vib1_x", "vib1_y", "vib1_z", "vib2_x", "vib2_y", "vib2_z",
];

/// Time-aligned multi-sensor waveform, stored channel-major as `[k, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelSignal {
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    samples: Tensor,
}

impl MultichannelSignal {
    pub fn new(sample_rate_hz: f64, channel_names: Vec<String>, samples: Tensor) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.rank() != 2 || samples.dim(0) == 0 || samples.dim(1) == 0 {
            return Err(Error::shape(
                "signal",
                format!("samples must be [k>=1, L>=1], got {:?}", samples.shape()),
            ));
        }
        if channel_names.len() != samples.dim(0) {
            return Err(Error::shape(
                "signal",
                format!("{} names for {} channels", channel_names.len(), samples.dim(0)),
            ));
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite("signal samples".into()));
        }
        Ok(Self {
            sample_rate_hz,
            channel_names,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.dim(0)
    }

    pub fn len(&self) -> usize {
        self.samples.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.samples.outer(c)
    }

    /// Copies `[start, start + w)` of every channel into `out` as `[C, w]`.
    pub fn copy_window(&self, start: usize, w: usize, out: &mut Vec<f64>) {
        for c in 0..self.channels() {
            out.extend_from_slice(&self.channel(c)[start..start + w]);
        }
    }
}

/// Which CSV columns hold the operating variables and the six vibration axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub speed: usize,
    pub load: usize,
    pub vibration: [usize; VIBRATION_CHANNELS],
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            speed: 0,
            load: 1,
            vibration: [2, 3, 4, 5, 6, 7],
        }
    }
}

impl ColumnMap {
    fn validate(&self) -> Result<()> {
        let mut all = vec![self.speed, self.load];
        all.extend_from_slice(&self.vibration);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() || sorted.iter().any(|&c| c >= CSV_COLUMNS) {
            return Err(Error::Invalid(format!(
                "column map must name {CSV_COLUMNS} distinct columns below {CSV_COLUMNS}: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn load_mcc5_csv(path: &Path, select_vibration_only: bool) -> Result<MultichannelSignal> {
    load_mcc5_csv_with(path, select_vibration_only, &ColumnMap::default())
}

pub fn load_mcc5_csv_with(path: &Path, select_vibration_only: bool, map: &ColumnMap) -> Result<MultichannelSignal> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mcc5_csv(&text, &path.display().to_string(), select_vibration_only, map)
}

/// Parses recording text. A single leading header row is accepted.
///
/// With `select_vibration_only` the six vibration columns are returned in
/// column-map order; otherwise all eight columns in file order.
pub fn parse_mcc5_csv(
    text: &str,
    source_name: &str,
    select_vibration_only: bool,
    map: &ColumnMap,
) -> Result<MultichannelSignal> {
    map.validate()?;
    let perr = |row: usize, msg: String| Error::Parse {
        source_name: source_name.to_string(),
        row,
        msg,
    };
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); CSV_COLUMNS];
    let mut header: Option<Vec<String>> = None;
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != CSV_COLUMNS {
            return Err(perr(
                row,
                format!("expected {CSV_COLUMNS} columns, found {}", cells.len()),
            ));
        }
        let parsed: Vec<std::result::Result<f64, _>> = cells.iter().map(|c| c.parse::<f64>()).collect();
        if first && parsed.iter().any(|p| p.is_err()) {
            header = Some(cells.iter().map(|s| s.to_string()).collect());
            first = false;
            continue;
        }
        first = false;
        for (col, (cell, p)) in cells.iter().zip(parsed).enumerate() {
            let v = p.map_err(|_| perr(row, format!("column {}: non-numeric cell `{cell}`", col + 1)))?;
            if !v.is_finite() {
                return Err(perr(row, format!("column {}: non-finite value `{cell}`", col + 1)));
            }
            columns[col].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(perr(0, "no data rows".into()));
    }
    let names: Vec<String> = header.unwrap_or_else(|| DEFAULT_COLUMN_NAMES.iter().map(|s| s.to_string()).collect());
    let order: Vec<usize> = if select_vibration_only {
        map.vibration.to_vec()
    } else {
        (0..CSV_COLUMNS).collect()
    };
    let len = columns[0].len();
    let mut data = Vec::with_capacity(order.len() * len);
    for &c in &order {
        data.extend_from_slice(&columns[c]);
    }
    MultichannelSignal::new(
        SAMPLE_RATE_HZ,
        order.iter().map(|&c| names[c].clone()).collect(),
        Tensor::new(vec![order.len(), len], data)?,
    )
}

/// Writes a six-channel vibration signal as an eight-column recording with
/// constant speed and load columns.
pub fn write_mcc5_csv<W: Write>(signal: &MultichannelSignal, speed_rpm: f64, load_nm: f64, out: &mut W) -> Result<()> {
    if signal.channels() != VIBRATION_CHANNELS {
        return Err(Error::shape(
            "write_mcc5_csv",
            format!("expected {VIBRATION_CHANNELS} channels, got {}", signal.channels()),
        ));
    }
    let io = |e| Error::io(Path::new("<csv>"), e);
    writeln!(out, "{}", DEFAULT_COLUMN_NAMES.join(",")).map_err(io)?;
    let mut line = String::new();
    for t in 0..signal.len() {
        line.clear();
        line.push_str(&format!("{speed_rpm},{load_nm}"));
        for c in 0..VIBRATION_CHANNELS {
            line.push_str(&format!(",{}", signal.channel(c)[t]));
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io)?;
    }
    Ok(())
}

/// Fixed-length, fixed-stride window lattice over a signal of length `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub count: usize,
    pub window: usize,
    pub stride: usize,
}

impl Segmentation {
    /// `floor((L - W) / s) + 1` windows; window `i` covers `[i*s, i*s + W)`.
    pub fn new(len: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Invalid(format!(
                "window ({window}) and stride ({stride}) must be positive"
            )));
        }
        if window > len {
            return Err(Error::Invalid(format!(
                "window length {window} exceeds signal length {len}"
            )));
        }
        Ok(Self {
            count: (len - window) / stride + 1,
            window,
            stride,
        })
    }

    pub fn start(&self, i: usize) -> usize {
        i * self.stride
    }

    pub fn starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |i| self.start(i))
    }

    /// Signal length needed for exactly `count` windows.
    pub fn span(count: usize, window: usize, stride: usize) -> usize {
        if count == 0 {
            0
        } else {
            (count - 1) * stride + window
        }
    }
}

pub fn segment(signal: &MultichannelSignal, window: usize, stride: usize) -> Result<Segmentation> {
    Segmentation::new(signal.len(), window, stride)
}

/// Materializes windows `0..count` of `seg` as a `[count, C, W]` tensor.
pub fn extract_windows(signal: &MultichannelSignal, seg: &Segmentation, count: usize) -> Result<Tensor> {
    if count > seg.count {
        return Err(Error::Invalid(format!(
            "requested {count} windows, only {} available",
            seg.count
        )));
    }
    let mut data = Vec::with_capacity(count * signal.channels() * seg.window);
    for i in 0..count {
        signal.copy_window(seg.start(i), seg.window, &mut data);
    }
    Tensor::new(vec![count, signal.channels(), seg.window], data)
}

/// Windows with fault-class and operating-condition labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    windows: Tensor,
    class_labels: Vec<usize>,
    domain_labels: Vec<usize>,
    pub window_length: usize,
    pub stride: usize,
    pub num_classes: usize,
    pub num_domains: usize,
}

impl WindowedDataset {
    pub fn new(
        windows: Tensor,
        class_labels: Vec<usize>,
        domain_labels: Vec<usize>,
        stride: usize,
        num_classes: usize,
        num_domains: usize,
    ) -> Result<Self> {
        if windows.rank() != 3 {
            return Err(Error::shape("dataset", format!("windows {:?}", windows.shape())));
        }
        let n = windows.dim(0);
        if class_labels.len() != n || domain_labels.len() != n {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{n} windows, {} class labels, {} domain labels",
                    class_labels.len(),
                    domain_labels.len()
                ),
            ));
        }
        if let Some(c) = class_labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Invalid(format!("class id {c} >= {num_classes}")));
        }
        if let Some(d) = domain_labels.iter().find(|&&d| d >= num_domains) {
            return Err(Error::Invalid(format!("domain id {d} >= {num_domains}")));
        }
        let window_length = windows.dim(2);
        Ok(Self {
            windows,
            class_labels,
            domain_labels,
            window_length,
            stride,
            num_classes,
            num_domains,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.windows.dim(1)
    }

    pub fn windows(&self) -> &Tensor {
        &self.windows
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn domain_labels(&self) -> &[usize] {
        &self.domain_labels
    }

    /// Row indices belonging to condition `domain`, in dataset order.
    pub fn domain_indices(&self, domain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domain_labels[i] == domain).collect()
    }

    /// Batch tensor and class labels for the given rows.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.windows.select_outer(rows),
            rows.iter().map(|&r| self.class_labels[r]).collect(),
        )
    }
}

/// Per-channel z-scoring statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and population standard deviation per channel over every
    /// sample of every window.
    pub fn fit(train: &WindowedDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Invalid("cannot fit a standardizer on an empty dataset".into()));
        }
        let (n, c, w) = (train.len(), train.channels(), train.window_length);
        let data = train.windows().data();
        let count = (n * w) as f64;
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                let base = (i * c + ch) * w;
                *m += data[base..base + w].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * w;
                var[ch] += data[base..base + w]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(c);
        for (ch, v) in var.iter().enumerate() {
            let s = (v / count).sqrt();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Invalid(format!("channel {ch} has zero variance")));
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, channels: usize) -> Result<()> {
        if channels != self.channels() {
            return Err(Error::shape(
                "standardize",
                format!("fitted on {} channels, got {channels}", self.channels()),
            ));
        }
        Ok(())
    }

    /// Transforms a `[n, C, W]` buffer in place.
    pub fn apply_windows(&self, data: &mut [f64], channels: usize, window: usize) -> Result<()> {
        self.check(channels)?;
        for (i, chunk) in data.chunks_exact_mut(window).enumerate() {
            let ch = i % channels;
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(())
    }

    pub fn apply(&self, ds: &WindowedDataset) -> Result<WindowedDataset> {
        let mut out = ds.clone();
        let (c, w) = (ds.channels(), ds.window_length);
        self.apply_windows(out.windows.data_mut(), c, w)?;
        Ok(out)
    }

    pub fn apply_signal(&self, signal: &MultichannelSignal) -> Result<MultichannelSignal> {
        self.check(signal.channels())?;
        let mut samples = signal.samples().clone();
        let len = signal.len();
        self.apply_windows(samples.data_mut(), signal.channels(), len)?;
        MultichannelSignal::new(signal.sample_rate_hz, signal.channel_names.clone(), samples)
    }
}

pub fn fit_standardizer(train: &WindowedDataset) -> Result<Standardizer> {
    Standardizer::fit(train)
}

pub fn apply_standardizer(st: &Standardizer, ds: &WindowedDataset) -> Result<WindowedDataset> {
    st.apply(ds)
}

/// One recording with its operating condition (domain) and fault class.
#[derive(Clone, Debug)]
pub struct LabeledSignal {
    pub domain: usize,
    pub class: usize,
    pub signal: MultichannelSignal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblySpec {
    pub window: usize,
    pub stride: usize,
    pub per_class: usize,
    pub num_classes: usize,
    pub num_domains: usize,
}

/// Segments every recording and keeps the first `per_class` windows of each.
///
/// Rows are ordered by `(domain, class)` regardless of input order. Every
/// pair of the `num_domains x num_classes` grid must appear exactly once.
pub fn assemble_offline(entries: &[LabeledSignal], spec: &AssemblySpec) -> Result<WindowedDataset> {
    let mut sorted: Vec<&LabeledSignal> = entries.iter().collect();
    sorted.sort_by_key(|e| (e.domain, e.class));
    for d in 0..spec.num_domains {
        for c in 0..spec.num_classes {
            let k = sorted.iter().filter(|e| e.domain == d && e.class == c).count();
            if k != 1 {
                return Err(Error::Invalid(format!(
                    "condition {d}, class {c}: expected one recording, found {k}"
                )));
            }
        }
    }
    if sorted.len() != spec.num_domains * spec.num_classes {
        return Err(Error::Invalid(format!(
            "{} recordings for a {}x{} grid",
            sorted.len(),
            spec.num_domains,
            spec.num_classes
        )));
    }
    let channels = sorted.first().map(|e| e.signal.channels()).unwrap_or(0);
    let n = sorted.len() * spec.per_class;
    let mut data = Vec::with_capacity(n * channels * spec.window);
    let mut class_labels = Vec::with_capacity(n);
    let mut domain_labels = Vec::with_capacity(n);
    for e in sorted {
        if e.signal.channels() != channels {
            return Err(Error::shape(
                "assemble_offline",
                format!("{} channels vs {channels}", e.signal.channels()),
            ));
        }
        let seg = segment(&e.signal, spec.window, spec.stride)?;
        if seg.count < spec.per_class {
            return Err(Error::Invalid(format!(
                "condition {}, class {}: {} windows available, {} requested (short by {})",
                e.domain,
                e.class,
                seg.count,
                spec.per_class,
                spec.per_class - seg.count
            )));
        }
        for i in 0..spec.per_class {
            e.signal.copy_window(seg.start(i), spec.window, &mut data);
        }
        class_labels.extend(std::iter::repeat_n(e.class, spec.per_class));
        domain_labels.extend(std::iter::repeat_n(e.domain, spec.per_class));
    }
    WindowedDataset::new(
        Tensor::new(vec![n, channels, spec.window], data)?,
        class_labels,
        domain_labels,
        spec.stride,
        spec.num_classes,
        spec.num_domains,
    )
}

pub const DATASET_FORMAT: &str = "faultdg.dataset/1";

/// JSON sidecar of a persisted dataset; the `.bin` holds the windows as
/// row-major little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format: String,
    pub shape: [usize; 3],
    pub window_length: usize,
    pub stride: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub class_labels: Vec<usize>,
    pub domain_labels: Vec<usize>,
    pub standardizer: Option<Standardizer>,
}

impl DatasetSidecar {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let s: Self = serde_json::from_slice(bytes)?;
        if s.format != DATASET_FORMAT {
            return Err(Error::Format(format!("unknown dataset format `{}`", s.format)));
        }
        if s.shape[2] != s.window_length {
            return Err(Error::Format(format!(
                "shape {:?} disagrees with window length {}",
                s.shape, s.window_length
            )));
        }
        if let Some(st) = &s.standardizer {
            if st.mean.len() != s.shape[1] || st.std.len() != s.shape[1] {
                return Err(Error::Format("standardizer channel count mismatch".into()));
            }
        }
        Ok(s)
    }

    /// Combines the sidecar with the binary payload.
    pub fn decode(&self, payload: &[u8]) -> Result<WindowedDataset> {
        let expected = self
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("shape {:?} overflows", self.shape)))?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "binary has {} bytes, shape {:?} needs {expected}",
                payload.len(),
                self.shape
            )));
        }
        let values = f64s_from_le_bytes(payload)?;
        WindowedDataset::new(
            Tensor::new(self.shape.to_vec(), values)?,
            self.class_labels.clone(),
            self.domain_labels.clone(),
            self.stride,
            self.num_classes,
            self.num_domains,
        )
        .map_err(|e| Error::Format(e.to_string()))
    }
}

/// Writes `<prefix>.bin` and `<prefix>.json`.
pub fn write_dataset(
    prefix: &Path,
    ds: &WindowedDataset,
    standardizer: Option<&Standardizer>,
) -> Result<(PathBuf, PathBuf)> {
    let sidecar = DatasetSidecar {
        format: DATASET_FORMAT.into(),
        shape: [ds.len(), ds.channels(), ds.window_length],
        window_length: ds.window_length,
        stride: ds.stride,
        num_classes: ds.num_classes,
        num_domains: ds.num_domains,
        class_labels: ds.class_labels.clone(),
        domain_labels: ds.domain_labels.clone(),
        standardizer: standardizer.cloned(),
    };
    let bin = prefix.with_extension("bin");
    let json = prefix.with_extension("json");
    fs::write(&bin, f64s_to_le_bytes(ds.windows().data())).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_vec(&sidecar)?).map_err(|e| Error::io(&json, e))?;
    Ok((bin, json))
}

pub fn read_dataset(prefix: &Path) -> Result<(WindowedDataset, Option<Standardizer>)> {
    let json = prefix.with_extension("json");
    let bin = prefix.with_extension("bin");
    let side = DatasetSidecar::from_json_bytes(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    Ok((side.decode(&payload)?, side.standardizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signal_from(k: usize, len: usize, f: impl Fn(usize, usize) -> f64) -> MultichannelSignal {
        let data = (0..k)
            .flat_map(|c| (0..len).map(move |t| (c, t)))
            .map(|(c, t)| f(c, t))
            .collect();
        MultichannelSignal::new(
            SAMPLE_RATE_HZ,
            (0..k).map(|c| format!("ch{c}")).collect(),
            Tensor::new(vec![k, len], data).unwrap(),
        )
        .unwrap()
    }

    const FIXTURE: &str = "speed,load,v1x,v1y,v1z,v2x,v2y,v2z\n\
        1000,20,0.1,0.2,0.3,0.4,0.5,0.6\n\
        1000,20,-1,-2,-3,-4,-5,-6\n\
        1000,20,7,8,9,10,11,12e-1\n";

    #[test]
    fn fixture_reads_vibration_columns() {
        let s = parse_mcc5_csv(FIXTURE, "fixture", true, &ColumnMap::default()).unwrap();
        assert_eq!(s.samples().shape(), &[6, 3]);
        assert_eq!(s.channel(0), &[0.1, -1.0, 7.0]);
        assert_eq!(s.channel(5), &[0.6, -6.0, 1.2]);
        assert_eq!(s.channel_names[0], "v1x");
        assert_eq!(s.sample_rate_hz, 12_800.0);
    }

    #[test]
    fn all_columns_without_selection() {
        let s = parse_mcc5_csv(FIXTURE, "fixture", false, &ColumnMap::default()).unwrap();
        assert_eq!(s.channels(), 8);
        assert_eq!(s.channel(0), &[1000.0; 3]);
    }

    #[test]
    fn headerless_input_accepted() {
        let body = FIXTURE.lines().skip(1).collect::<Vec<_>>().join("\n");
        let s = parse_mcc5_csv(&body, "x", true, &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.channel_names[0], "vib1_x");
    }

    #[test]
    fn seven_columns_is_an_error_naming_eight() {
        let err = parse_mcc5_csv("1,2,3,4,5,6,7\n", "bad.csv", true, &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("expected 8") && err.contains("row 1"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "1,2,3,4,5,6,7,8\n1,2,3,x,5,6,7,8\n";
        let err = parse_mcc5_csv(text, "bad.csv", true, &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2") && err.contains("`x`"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_mcc5_csv("", "e", true, &ColumnMap::default()).is_err());
        assert!(parse_mcc5_csv("a,b,c,d,e,f,g,h\n", "e", true, &ColumnMap::default()).is_err());
    }

    #[test]
    fn column_map_overrides_order() {
        let map = ColumnMap {
            speed: 7,
            load: 6,
            vibration: [0, 1, 2, 3, 4, 5],
        };
        let s = parse_mcc5_csv(FIXTURE, "f", true, &map).unwrap();
        assert_eq!(s.channel(0), &[1000.0; 3]);
        let bad = ColumnMap {
            speed: 0,
            load: 0,
            vibration: [2, 3, 4, 5, 6, 7],
        };
        assert!(parse_mcc5_csv(FIXTURE, "f", true, &bad).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..6 * 50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = signal_from(6, 50, |c, t| values[c * 50 + t]);
        let mut buf = Vec::new();
        write_mcc5_csv(&s, 1500.0, 20.0, &mut buf).unwrap();
        let text = std::str::from_utf8(&buf).unwrap();
        let back = parse_mcc5_csv(text, "rt", true, &ColumnMap::default()).unwrap();
        for c in 0..6 {
            for (a, b) in s.channel(c).iter().zip(back.channel(c)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(Segmentation::new(1024, 1024, 64).unwrap().count, 1);
        assert_eq!(Segmentation::new(1088, 1024, 64).unwrap().count, 2);
        // start-index enumeration as the oracle
        let enumerated = (0..768_000usize).step_by(64).filter(|s| s + 1024 <= 768_000).count();
        assert_eq!(enumerated, 11_985);
        assert_eq!(Segmentation::new(768_000, 1024, 64).unwrap().count, enumerated);
        assert!(Segmentation::new(1000, 1024, 64).is_err());
        assert!(Segmentation::new(1000, 10, 0).is_err());
    }

    #[test]
    fn sixty_second_recording_length() {
        let len = (60.0 * SAMPLE_RATE_HZ) as usize;
        assert_eq!(len, 768_000);
    }

    proptest! {
        #[test]
        fn windows_stay_in_bounds_and_follow_stride(len in 1usize..5000, w in 1usize..600, s in 1usize..200) {
            prop_assume!(w <= len);
            let seg = Segmentation::new(len, w, s).unwrap();
            let starts: Vec<usize> = seg.starts().collect();
            prop_assert_eq!(starts.len(), seg.count);
            for (i, st) in starts.iter().enumerate() {
                prop_assert_eq!(*st, i * s);
                prop_assert!(st + w <= len);
            }
            // one more stride would fall off the end
            prop_assert!(seg.count * s + w > len);
        }
    }

    fn noisy_dataset(seed: u64) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c, w) = (10, 3, 32);
        let data: Vec<f64> = (0..n * c * w)
            .map(|i| 5.0 * ((i / w) % c) as f64 + 2.0 + rng.random_range(-0.5..0.5))
            .collect();
        WindowedDataset::new(
            Tensor::new(vec![n, c, w], data).unwrap(),
            vec![0; n],
            vec![0; n],
            16,
            1,
            1,
        )
        .unwrap()
    }

    fn channel_moments(ds: &WindowedDataset) -> Vec<(f64, f64)> {
        let (n, c, w) = (ds.len(), ds.channels(), ds.window_length);
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = (0..n)
                    .flat_map(|i| ds.windows().data()[(i * c + ch) * w..(i * c + ch + 1) * w].to_vec())
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
                (m, v.sqrt())
            })
            .collect()
    }

    #[test]
    fn standardized_training_data_is_unit_scaled() {
        let ds = noisy_dataset(1);
        let st = fit_standardizer(&ds).unwrap();
        let z = apply_standardizer(&st, &ds).unwrap();
        for (m, s) in channel_moments(&z) {
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "{m} {s}");
        }
        // refitting on the transformed data is (numerically) the identity
        let st2 = fit_standardizer(&z).unwrap();
        let z2 = apply_standardizer(&st2, &z).unwrap();
        for (a, b) in z.windows().data().iter().zip(z2.windows().data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardizer_uses_stored_statistics_only() {
        let st = fit_standardizer(&noisy_dataset(1)).unwrap();
        let other = noisy_dataset(2);
        let z = st.apply(&other).unwrap();
        let st_other = fit_standardizer(&other).unwrap();
        assert_ne!(st, st_other);
        let x = other.windows().data()[0];
        assert_eq!(z.windows().data()[0], (x - st.mean[0]) / st.std[0]);
    }

    #[test]
    fn zero_channel_rejected() {
        let ds = WindowedDataset::new(Tensor::zeros(&[2, 1, 8]), vec![0, 0], vec![0, 0], 8, 1, 1).unwrap();
        assert!(fit_standardizer(&ds).unwrap_err().to_string().contains("zero variance"));
    }

    fn grid(m: usize, t: usize, len: usize) -> Vec<LabeledSignal> {
        let mut v = Vec::new();
        for d in 0..m {
            for c in 0..t {
                v.push(LabeledSignal {
                    domain: d,
                    class: c,
                    signal: signal_from(2, len, move |ch, i| (d * 100 + c * 10 + ch) as f64 + i as f64 * 1e-3),
                });
            }
        }
        v
    }

    #[test]
    fn assembly_counts_and_shortfall() {
        let spec = AssemblySpec {
            window: 16,
            stride: 4,
            per_class: 5,
            num_classes: 1,
            num_domains: 1,
        };
        let ds = assemble_offline(&grid(1, 1, 100), &spec).unwrap();
        assert_eq!(ds.len(), 5);
        let too_many = AssemblySpec { per_class: 50, ..spec };
        let err = assemble_offline(&grid(1, 1, 100), &too_many).unwrap_err().to_string();
        assert!(err.contains("short by"), "{err}");
        let spec24 = AssemblySpec {
            num_classes: 4,
            num_domains: 2,
            ..spec
        };
        let ds = assemble_offline(&grid(2, 4, 100), &spec24).unwrap();
        assert_eq!(ds.len(), 40);
        assert!(assemble_offline(&grid(2, 3, 100), &spec24).is_err());
    }

    #[test]
    fn assembly_ignores_input_order() {
        let spec = AssemblySpec {
            window: 8,
            stride: 8,
            per_class: 3,
            num_classes: 3,
            num_domains: 2,
        };
        let mut entries = grid(2, 3, 64);
        let a = assemble_offline(&entries, &spec).unwrap();
        entries.reverse();
        entries.swap(0, 3);
        let b = assemble_offline(&entries, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = noisy_dataset(3);
        let st = fit_standardizer(&ds).unwrap();
        let prefix = dir.path().join("offline");
        write_dataset(&prefix, &ds, Some(&st)).unwrap();
        let (back, st_back) = read_dataset(&prefix).unwrap();
        assert_eq!(back, ds);
        assert_eq!(st_back.unwrap(), st);
    }
}
