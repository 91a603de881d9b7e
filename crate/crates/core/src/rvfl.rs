//! Random vector functional link classifier.
//!
//! A fixed random sigmoid hidden layer plus direct links from the input;
//! output weights come from the ridge normal equations
//! `(EᵀE + σI) β = EᵀY` with `E = [Z | H]`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Cholesky, MatRef};
use crate::params::{load_checkpoint, save_checkpoint, ParamVector};
use crate::tensor::Tensor;

/// Rows processed at a time when the design matrix is not materialized.
const ROW_BLOCK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RvflConfig {
    pub hidden: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for RvflConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            sigma: 1e-4,
            seed: 0,
        }
    }
}

/// Features `Z [n, J]` with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    z: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureMatrix {
    pub fn new(z: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if z.rank() != 2 || z.dim(0) != labels.len() {
            return Err(Error::shape(
                "feature matrix",
                format!("z {:?} with {} labels", z.shape(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !z.all_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self { z, labels, num_classes })
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.dim(1)
    }

    /// One-hot targets `[n, V]`.
    pub fn one_hot(&self) -> Tensor {
        one_hot(&self.labels, self.num_classes)
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut y = vec![0.0; labels.len() * num_classes];
    for (r, &l) in labels.iter().enumerate() {
        y[r * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], y).expect("shape matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RvflModel {
    /// `[Q, J]`
    pub w: Tensor,
    /// `[Q]`
    pub b: Tensor,
    /// `[J + Q, V]`
    pub beta: Tensor,
    pub sigma: f64,
    pub seed: u64,
}

impl RvflModel {
    pub fn input_dim(&self) -> usize {
        self.w.dim(1)
    }

    pub fn hidden(&self) -> usize {
        self.w.dim(0)
    }

    pub fn num_classes(&self) -> usize {
        self.beta.dim(1)
    }

    fn check_input(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.dim(1) != self.input_dim() {
            return Err(Error::shape(
                "rvfl",
                format!("expected [n, {}], got {:?}", self.input_dim(), z.shape()),
            ));
        }
        if !z.all_finite() {
            return Err(Error::NonFinite("rvfl input".into()));
        }
        Ok(())
    }

    /// Output scores `Ŷ = E β`, `[n, V]`.
    pub fn scores(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input(z)?;
        let (n, j, v) = (z.dim(0), self.input_dim(), self.num_classes());
        let d = j + self.hidden();
        let mut out = vec![0.0; n * v];
        let mut e = Vec::new();
        for start in (0..n).step_by(ROW_BLOCK) {
            let rows = ROW_BLOCK.min(n - start);
            design_rows(self, &z.data()[start * j..(start + rows) * j], rows, &mut e);
            gemm(
                MatRef::new(&e, rows, d),
                MatRef::new(self.beta.data(), d, v),
                0.0,
                &mut out[start * v..(start + rows) * v],
            );
        }
        Tensor::new(vec![n, v], out)
    }

    pub fn save(&self, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
        let params = ParamVector::new(vec![
            ("rvfl.w".into(), self.w.clone()),
            ("rvfl.b".into(), self.b.clone()),
            ("rvfl.beta".into(), self.beta.clone()),
        ])?;
        let meta = serde_json::json!({
            "kind": "rvfl",
            "J": self.input_dim(),
            "Q": self.hidden(),
            "V": self.num_classes(),
            "sigma": self.sigma,
            "seed": self.seed,
        });
        save_checkpoint(prefix, &params, meta)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (params, manifest) = load_checkpoint(prefix)?;
        let meta = &manifest.meta;
        if meta["kind"] != "rvfl" {
            return Err(Error::Format(format!("{}: not an rvfl checkpoint", prefix.display())));
        }
        let field = |k: &str| {
            meta[k]
                .as_u64()
                .ok_or_else(|| Error::Format(format!("rvfl checkpoint: missing `{k}`")))
        };
        let (j, q, v, seed) = (
            field("J")? as usize,
            field("Q")? as usize,
            field("V")? as usize,
            field("seed")?,
        );
        let sigma = meta["sigma"]
            .as_f64()
            .ok_or_else(|| Error::Format("rvfl checkpoint: missing `sigma`".into()))?;
        let get = |n: &str| {
            params
                .get(n)
                .cloned()
                .ok_or_else(|| Error::Format(format!("rvfl checkpoint: missing slot `{n}`")))
        };
        let model = Self {
            w: get("rvfl.w")?,
            b: get("rvfl.b")?,
            beta: get("rvfl.beta")?,
            sigma,
            seed,
        };
        if model.w.shape() != [q, j] || model.b.shape() != [q] || model.beta.shape() != [j + q, v] {
            return Err(Error::Format(
                "rvfl checkpoint: slot shapes disagree with J, Q, V".into(),
            ));
        }
        Ok(model)
    }
}

/// `H[r, i] = sigmoid(w_i · Z[r] + b_i)`.
pub fn hidden_layer(model: &RvflModel, z: &Tensor) -> Result<Tensor> {
    model.check_input(z)?;
    let n = z.dim(0);
    Tensor::new(vec![n, model.hidden()], hidden_rows(model, z.data(), n))
}

fn hidden_rows(model: &RvflModel, z: &[f64], n: usize) -> Vec<f64> {
    let (q, j) = (model.hidden(), model.input_dim());
    let mut h = vec![0.0; n * q];
    if q == 0 {
        return h;
    }
    for row in h.chunks_exact_mut(q) {
        row.copy_from_slice(model.b.data());
    }
    gemm(MatRef::new(z, n, j), MatRef::new(model.w.data(), q, j).t(), 1.0, &mut h);
    h.iter_mut().for_each(|v| *v = sigmoid(*v));
    h
}

/// Writes `[Z | H]` for `rows` consecutive inputs into `e`.
fn design_rows(model: &RvflModel, z: &[f64], rows: usize, e: &mut Vec<f64>) {
    let (j, q) = (model.input_dim(), model.hidden());
    let h = hidden_rows(model, z, rows);
    e.clear();
    for r in 0..rows {
        e.extend_from_slice(&z[r * j..(r + 1) * j]);
        e.extend_from_slice(&h[r * q..(r + 1) * q]);
    }
}

/// `E = [Z | H]`, direct-link columns first.
pub fn build_design(z: &Tensor, h: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 || h.rank() != 2 || z.dim(0) != h.dim(0) {
        return Err(Error::shape(
            "build_design",
            format!("z {:?}, h {:?}", z.shape(), h.shape()),
        ));
    }
    let (n, j, q) = (z.dim(0), z.dim(1), h.dim(1));
    let mut e = Vec::with_capacity(n * (j + q));
    for r in 0..n {
        e.extend_from_slice(&z.data()[r * j..(r + 1) * j]);
        e.extend_from_slice(&h.data()[r * q..(r + 1) * q]);
    }
    Tensor::new(vec![n, j + q], e)
}

fn check_system(e: &Tensor, y: &Tensor, sigma: f64) -> Result<()> {
    if e.rank() != 2 || y.rank() != 2 || e.dim(0) != y.dim(0) {
        return Err(Error::shape(
            "solve_beta",
            format!("e {:?}, y {:?}", e.shape(), y.shape()),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if !e.all_finite() || !y.all_finite() {
        return Err(Error::NonFinite("ridge system".into()));
    }
    Ok(())
}

fn singular(sigma: f64, what: &str) -> Error {
    if sigma == 0.0 {
        Error::Singular(format!("{what} is singular at sigma = 0; use sigma > 0"))
    } else {
        Error::Singular(format!("{what} is not positive definite at sigma = {sigma}"))
    }
}

/// Ridge solution `β = (EᵀE + σI)⁻¹ EᵀY` by Cholesky.
///
/// When `E` has more columns than rows and `σ > 0` the equivalent
/// `β = Eᵀ (EEᵀ + σI)⁻¹ Y` is used, which factors the smaller matrix.
pub fn solve_beta(e: &Tensor, y: &Tensor, sigma: f64) -> Result<Tensor> {
    check_system(e, y, sigma)?;
    let (n, d, v) = (e.dim(0), e.dim(1), y.dim(1));
    if sigma > 0.0 && d > n {
        let mut k = vec![0.0; n * n];
        gemm(
            MatRef::new(e.data(), n, d),
            MatRef::new(e.data(), n, d).t(),
            0.0,
            &mut k,
        );
        for i in 0..n {
            k[i * n + i] += sigma;
        }
        let chol = Cholesky::factor(&k, n).map_err(|_| singular(sigma, "EEᵀ + σI"))?;
        let mut a = y.data().to_vec();
        chol.solve_in_place(&mut a, v);
        let mut beta = vec![0.0; d * v];
        gemm(MatRef::new(e.data(), n, d).t(), MatRef::new(&a, n, v), 0.0, &mut beta);
        return Tensor::new(vec![d, v], beta);
    }
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d * v];
    gemm(
        MatRef::new(e.data(), n, d).t(),
        MatRef::new(e.data(), n, d),
        0.0,
        &mut gram,
    );
    gemm(
        MatRef::new(e.data(), n, d).t(),
        MatRef::new(y.data(), n, v),
        0.0,
        &mut rhs,
    );
    solve_gram(gram, rhs, d, v, sigma)
}

fn solve_gram(mut gram: Vec<f64>, mut rhs: Vec<f64>, d: usize, v: usize, sigma: f64) -> Result<Tensor> {
    for i in 0..d {
        gram[i * d + i] += sigma;
    }
    let chol = Cholesky::factor(&gram, d).map_err(|_| singular(sigma, "EᵀE + σI"))?;
    chol.solve_in_place(&mut rhs, v);
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(singular(sigma, "EᵀE + σI"));
    }
    Tensor::new(vec![d, v], rhs)
}

/// `‖(EᵀE + σI) β − EᵀY‖∞` and `‖EᵀY‖∞`.
pub fn normal_residual(e: &Tensor, y: &Tensor, sigma: f64, beta: &Tensor) -> Result<(f64, f64)> {
    check_system(e, y, sigma)?;
    let (n, d, v) = (e.dim(0), e.dim(1), y.dim(1));
    if beta.shape() != [d, v] {
        return Err(Error::shape("normal_residual", format!("beta {:?}", beta.shape())));
    }
    let mut eb = vec![0.0; n * v];
    gemm(
        MatRef::new(e.data(), n, d),
        MatRef::new(beta.data(), d, v),
        0.0,
        &mut eb,
    );
    let mut lhs: Vec<f64> = beta.data().iter().map(|b| sigma * b).collect();
    gemm(MatRef::new(e.data(), n, d).t(), MatRef::new(&eb, n, v), 1.0, &mut lhs);
    let mut ety = vec![0.0; d * v];
    gemm(
        MatRef::new(e.data(), n, d).t(),
        MatRef::new(y.data(), n, v),
        0.0,
        &mut ety,
    );
    let inf = |x: &mut dyn Iterator<Item = f64>| x.fold(0.0f64, |m, a| m.max(a.abs()));
    let res = inf(&mut lhs.iter().zip(&ety).map(|(a, b)| a - b));
    Ok((res, inf(&mut ety.iter().copied())))
}

/// Draws the hidden layer from `cfg.seed` and solves for the output weights.
pub fn rvfl_train(features: &FeatureMatrix, cfg: &RvflConfig) -> Result<RvflModel> {
    if features.is_empty() {
        return Err(Error::Invalid("rvfl training needs at least one row".into()));
    }
    let (n, j, v) = (features.len(), features.dim(), features.num_classes());
    let q = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    let w = Tensor::new(vec![q, j], draw(q * j))?;
    let b = Tensor::new(vec![q], draw(q))?;
    let mut model = RvflModel {
        w,
        b,
        beta: Tensor::zeros(&[j + q, v]),
        sigma: cfg.sigma,
        seed: cfg.seed,
    };
    let d = j + q;
    let y = features.one_hot();
    if cfg.sigma > 0.0 && d > n {
        let h = hidden_layer(&model, features.z())?;
        let e = build_design(features.z(), &h)?;
        model.beta = solve_beta(&e, &y, cfg.sigma)?;
        return Ok(model);
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::Invalid(format!(
            "sigma must be finite and >= 0, got {}",
            cfg.sigma
        )));
    }
    // accumulate EᵀE and EᵀY over row blocks
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d * v];
    let mut e = Vec::new();
    for start in (0..n).step_by(ROW_BLOCK) {
        let rows = ROW_BLOCK.min(n - start);
        design_rows(
            &model,
            &features.z().data()[start * j..(start + rows) * j],
            rows,
            &mut e,
        );
        let eb = MatRef::new(&e, rows, d);
        gemm(eb.t(), eb, 1.0, &mut gram);
        gemm(
            eb.t(),
            MatRef::new(&y.data()[start * v..(start + rows) * v], rows, v),
            1.0,
            &mut rhs,
        );
    }
    model.beta = solve_gram(gram, rhs, d, v, cfg.sigma)?;
    Ok(model)
}

/// Row-wise argmax of `E β`; ties go to the lowest class index.
pub fn rvfl_predict(model: &RvflModel, z: &Tensor) -> Result<Vec<usize>> {
    Ok(crate::models::argmax_rows(&model.scores(z)?))
}
