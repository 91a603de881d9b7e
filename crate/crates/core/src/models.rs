//! Multi-scale 1D CNN encoder and MLP classifier head.
//!
//! Encoder: one branch per kernel size, each
//! `conv(C→ch) → ReLU → max_pool → global_avg_pool`, branch outputs
//! concatenated and mapped by `dense → ReLU` to the feature dimension.
//! Head: `dense(feature→hidden) → ReLU → dense(hidden→classes)`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv1d_single, dense_forward, Graph, ParamVars, Var};
use crate::error::{Error, Result};
use crate::params::{load_checkpoint, save_checkpoint, ParamVector};
use crate::signal::MultichannelSignal;
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub window_length: usize,
    pub kernel_sizes: Vec<usize>,
    pub branch_channels: Vec<usize>,
    pub pool_size: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            window_length: 1024,
            kernel_sizes: vec![7, 31, 127],
            branch_channels: vec![16, 16, 16],
            pool_size: 4,
            feature_dim: FEATURE_DIM,
            head_hidden: 32,
            num_classes: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("model config: {m}")));
        if self.kernel_sizes.is_empty() || self.kernel_sizes.len() != self.branch_channels.len() {
            return bad(format!(
                "{} kernel sizes for {} branch channel counts",
                self.kernel_sizes.len(),
                self.branch_channels.len()
            ));
        }
        for (i, &k) in self.kernel_sizes.iter().enumerate() {
            if k % 2 == 0 {
                return bad(format!("kernel size {k} is not odd"));
            }
            if self.kernel_sizes[..i].contains(&k) {
                return bad(format!("kernel size {k} repeated"));
            }
            if k > self.window_length || (self.window_length - k + 1) / self.pool_size.max(1) == 0 {
                return bad(format!("kernel size {k} too large for window {}", self.window_length));
            }
        }
        if self.branch_channels.contains(&0) {
            return bad("branch with zero channels".into());
        }
        if self.feature_dim != FEATURE_DIM {
            return bad(format!(
                "feature dimension must be {FEATURE_DIM}, got {}",
                self.feature_dim
            ));
        }
        if self.in_channels == 0 || self.pool_size == 0 || self.head_hidden == 0 || self.num_classes < 2 {
            return bad("channel, pool, hidden and class counts must be positive (>= 2 classes)".into());
        }
        Ok(())
    }

    fn concat_width(&self) -> usize {
        self.branch_channels.iter().sum()
    }

    /// Pooled length for a branch with kernel `k` over one window.
    fn pooled_len(&self, k: usize) -> usize {
        (self.window_length - k + 1) / self.pool_size
    }
}

/// Learnable parameters of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams(pub ParamVector);

/// Learnable parameters of the classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams(pub ParamVector);

fn branch_w(i: usize) -> String {
    format!("enc.branch{i}.w")
}
fn branch_b(i: usize) -> String {
    format!("enc.branch{i}.b")
}
const ENC_FC_W: &str = "enc.fc.w";
const ENC_FC_B: &str = "enc.fc.b";
const HEAD_FC1_W: &str = "head.fc1.w";
const HEAD_FC1_B: &str = "head.fc1.b";
const HEAD_FC2_W: &str = "head.fc2.w";
const HEAD_FC2_B: &str = "head.fc2.b";

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    // U(-b, b) with b = sqrt(6 / fan_in) has variance 2 / fan_in.
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
    .expect("shape matches")
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<(EncoderParams, HeadParams)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Vec::new();
    for (i, (&k, &ch)) in cfg.kernel_sizes.iter().zip(&cfg.branch_channels).enumerate() {
        enc.push((
            branch_w(i),
            uniform(&mut rng, &[ch, cfg.in_channels, k], cfg.in_channels * k),
        ));
        enc.push((branch_b(i), Tensor::zeros(&[ch])));
    }
    let cw = cfg.concat_width();
    enc.push((ENC_FC_W.into(), uniform(&mut rng, &[cw, cfg.feature_dim], cw)));
    enc.push((ENC_FC_B.into(), Tensor::zeros(&[cfg.feature_dim])));
    let head = vec![
        (
            HEAD_FC1_W.into(),
            uniform(&mut rng, &[cfg.feature_dim, cfg.head_hidden], cfg.feature_dim),
        ),
        (HEAD_FC1_B.into(), Tensor::zeros(&[cfg.head_hidden])),
        (
            HEAD_FC2_W.into(),
            uniform(&mut rng, &[cfg.head_hidden, cfg.num_classes], cfg.head_hidden),
        ),
        (HEAD_FC2_B.into(), Tensor::zeros(&[cfg.num_classes])),
    ];
    Ok((
        EncoderParams(ParamVector::new(enc)?),
        HeadParams(ParamVector::new(head)?),
    ))
}

fn check_batch(cfg: &ModelConfig, batch: &Tensor) -> Result<()> {
    if batch.rank() != 3 || batch.dim(1) != cfg.in_channels || batch.dim(2) != cfg.window_length {
        return Err(Error::shape(
            "encoder",
            format!(
                "expected [B, {}, {}], got {:?}",
                cfg.in_channels,
                cfg.window_length,
                batch.shape()
            ),
        ));
    }
    Ok(())
}

/// Records the encoder on `g`; `x` is `[B, C, W]`, result `[B, 64]`.
pub fn encoder_graph(g: &mut Graph, cfg: &ModelConfig, vars: &ParamVars, x: Var) -> Result<Var> {
    check_batch(cfg, g.value(x))?;
    let mut pooled = Vec::with_capacity(cfg.kernel_sizes.len());
    for i in 0..cfg.kernel_sizes.len() {
        let c = g.conv1d(x, vars.get(&branch_w(i))?, vars.get(&branch_b(i))?)?;
        let r = g.relu(c)?;
        let m = g.max_pool1d(r, cfg.pool_size)?;
        pooled.push(g.global_avg_pool1d(m)?);
    }
    let cat = g.concat(&pooled)?;
    let fc = g.dense(cat, vars.get(ENC_FC_W)?, vars.get(ENC_FC_B)?)?;
    g.relu(fc)
}

/// Records the head on `g`; `z` is `[B, 64]`, result `[B, T]` logits.
pub fn head_graph(g: &mut Graph, cfg: &ModelConfig, vars: &ParamVars, z: Var) -> Result<Var> {
    let t = g.value(z);
    if t.rank() != 2 || t.dim(1) != cfg.feature_dim {
        return Err(Error::shape(
            "head",
            format!("expected [B, {}], got {:?}", cfg.feature_dim, t.shape()),
        ));
    }
    let h = g.dense(z, vars.get(HEAD_FC1_W)?, vars.get(HEAD_FC1_B)?)?;
    let h = g.relu(h)?;
    g.dense(h, vars.get(HEAD_FC2_W)?, vars.get(HEAD_FC2_B)?)
}

/// Encoder then head: `[B, C, W]` to logits.
pub fn logits_graph(g: &mut Graph, cfg: &ModelConfig, vars: &ParamVars, x: Var) -> Result<Var> {
    let z = encoder_graph(g, cfg, vars, x)?;
    head_graph(g, cfg, vars, z)
}

const INFERENCE_CHUNK: usize = 32;

/// Features `[B, 64]` for a batch of windows `[B, C, W]`.
pub fn encoder_forward(cfg: &ModelConfig, p: &EncoderParams, batch: &Tensor) -> Result<Tensor> {
    check_batch(cfg, batch)?;
    if !batch.all_finite() {
        return Err(Error::NonFinite("encoder input".into()));
    }
    let n = batch.dim(0);
    let mut out = Vec::with_capacity(n * cfg.feature_dim);
    let mut start = 0;
    while start < n {
        let end = (start + INFERENCE_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut g = Graph::new();
        let vars = constants(&mut g, &p.0);
        let x = g.constant(batch.select_outer(&rows));
        let z = encoder_graph(&mut g, cfg, &vars, x)?;
        out.extend_from_slice(g.value(z).data());
        start = end;
    }
    Tensor::new(vec![n, cfg.feature_dim], out)
}

/// Logits `[B, T]` for features `[B, 64]`.
pub fn head_forward(cfg: &ModelConfig, h: &HeadParams, z: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 || z.dim(1) != cfg.feature_dim {
        return Err(Error::shape(
            "head",
            format!("expected [B, {}], got {:?}", cfg.feature_dim, z.shape()),
        ));
    }
    let get = |n: &str| {
        h.0.get(n)
            .ok_or_else(|| Error::Invalid(format!("head slot `{n}` missing")))
    };
    let (w1, b1, w2, b2) = (get(HEAD_FC1_W)?, get(HEAD_FC1_B)?, get(HEAD_FC2_W)?, get(HEAD_FC2_B)?);
    let bsz = z.dim(0);
    let mut hid = dense_forward(z.data(), w1.data(), b1.data(), bsz, cfg.feature_dim, cfg.head_hidden);
    hid.iter_mut().for_each(|v| *v = v.max(0.0));
    let out = dense_forward(&hid, w2.data(), b2.data(), bsz, cfg.head_hidden, cfg.num_classes);
    Tensor::new(vec![bsz, cfg.num_classes], out)
}

fn constants(g: &mut Graph, p: &ParamVector) -> ParamVars {
    // Binding as leaves is harmless for inference: no backward pass is run.
    g.bind(p)
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    if t.rank() != 2 || t.dim(1) == 0 {
        return vec![0; t.shape().first().copied().unwrap_or(0)];
    }
    (0..t.dim(0))
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Features for every window of a continuous signal at a fixed stride.
///
/// Equivalent to extracting each window and calling [`encoder_forward`], but
/// shares the convolution over overlapping windows. Requires the stride to
/// be a multiple of the pool size so pooling cells line up across windows.
pub fn encode_strided(
    cfg: &ModelConfig,
    p: &EncoderParams,
    signal: &MultichannelSignal,
    stride: usize,
    count: usize,
) -> Result<Tensor> {
    cfg.validate()?;
    if signal.channels() != cfg.in_channels {
        return Err(Error::shape(
            "encode_strided",
            format!(
                "signal has {} channels, encoder expects {}",
                signal.channels(),
                cfg.in_channels
            ),
        ));
    }
    if stride == 0 || stride % cfg.pool_size != 0 {
        return Err(Error::Invalid(format!(
            "stride {stride} must be a positive multiple of the pool size {}",
            cfg.pool_size
        )));
    }
    if count == 0 {
        return Ok(Tensor::zeros(&[0, cfg.feature_dim]));
    }
    let need = (count - 1) * stride + cfg.window_length;
    if need > signal.len() {
        return Err(Error::Invalid(format!(
            "{count} windows need {need} samples, signal has {}",
            signal.len()
        )));
    }
    let get = |n: &str| {
        p.0.get(n)
            .ok_or_else(|| Error::Invalid(format!("encoder slot `{n}` missing")))
    };
    let c_in = cfg.in_channels;
    let cw = cfg.concat_width();
    let mut concat = vec![0.0; count * cw];
    let block = 64usize;
    let mut xbuf = Vec::new();
    let mut conv = Vec::new();
    let mut offset = 0;
    for (bi, (&k, &ch)) in cfg.kernel_sizes.iter().zip(&cfg.branch_channels).enumerate() {
        let (w, b) = (get(&branch_w(bi))?, get(&branch_b(bi))?);
        let pooled_per_window = cfg.pooled_len(k);
        let cells_per_stride = stride / cfg.pool_size;
        let mut first = 0;
        while first < count {
            let nwin = block.min(count - first);
            let start = first * stride;
            let span = (nwin - 1) * stride + cfg.window_length;
            xbuf.clear();
            for c in 0..c_in {
                xbuf.extend_from_slice(&signal.channel(c)[start..start + span]);
            }
            let lo = span - k + 1;
            conv.resize(ch * lo, 0.0);
            conv1d_single(&xbuf, w.data(), b.data(), c_in, span, ch, k, &mut conv);
            let cells = lo / cfg.pool_size;
            for o in 0..ch {
                let row = &conv[o * lo..(o + 1) * lo];
                let pooled: Vec<f64> = (0..cells)
                    .map(|q| {
                        let cell = &row[q * cfg.pool_size..(q + 1) * cfg.pool_size];
                        // relu then max, matching the graph order
                        let mut best = cell[0].max(0.0);
                        for &v in &cell[1..] {
                            let r = v.max(0.0);
                            if r > best {
                                best = r;
                            }
                        }
                        best
                    })
                    .collect();
                for i in 0..nwin {
                    let s = i * cells_per_stride;
                    let mean = pooled[s..s + pooled_per_window].iter().sum::<f64>() / pooled_per_window as f64;
                    concat[(first + i) * cw + offset + o] = mean;
                }
            }
            first += nwin;
        }
        offset += ch;
    }
    let (fw, fb) = (get(ENC_FC_W)?, get(ENC_FC_B)?);
    let mut out = dense_forward(&concat, fw.data(), fb.data(), count, cw, cfg.feature_dim);
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::new(vec![count, cfg.feature_dim], out)
}

/// A complete encoder + head model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl Model {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        let (encoder, head) = init_params(cfg, cfg.seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            head,
        })
    }

    /// Encoder and head slots joined into one vector.
    pub fn params(&self) -> ParamVector {
        self.encoder.0.concat(&self.head.0).expect("disjoint slot names")
    }

    pub fn from_params(cfg: &ModelConfig, params: &ParamVector) -> Self {
        Self {
            cfg: cfg.clone(),
            encoder: EncoderParams(params.filter_prefix("enc.")),
            head: HeadParams(params.filter_prefix("head.")),
        }
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let z = encoder_forward(&self.cfg, &self.encoder, batch)?;
        head_forward(&self.cfg, &self.head, &z)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    pub fn save(&self, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
        let meta = serde_json::json!({ "kind": "encoder+head", "model_config": self.cfg });
        save_checkpoint(prefix, &self.params(), meta)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (params, manifest) = load_checkpoint(prefix)?;
        let cfg: ModelConfig = serde_json::from_value(manifest.meta["model_config"].clone())
            .map_err(|e| Error::Format(format!("model config in checkpoint: {e}")))?;
        cfg.validate()?;
        let model = Self::from_params(&cfg, &params);
        let expected = Self::init(&cfg)?.params();
        let layout_ok = expected.num_slots() == params.num_slots()
            && expected
                .slots()
                .iter()
                .zip(model.params().slots())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape());
        if !layout_ok {
            return Err(Error::Format("checkpoint slots do not match its model config".into()));
        }
        Ok(model)
    }
}
