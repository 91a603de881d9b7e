//! Meta-learning domain generalization trainer.
//!
//! Each step splits the source domains into meta-train and meta-test sets,
//! takes a virtual inner step on the meta-train loss and scores the result on
//! meta-test. The outer update is plain SGD on
//! `L_tr(Θ) + γ · L_te(Θ − α ∇L_tr(Θ))`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp, value_and_grad, Graph, ParamVars, Var};
use crate::error::{Error, Result};
use crate::models::{logits_graph, Model};
use crate::params::ParamVector;
use crate::rng::rng_for;
use crate::signal::WindowedDataset;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    FirstOrder,
    ExactHvp,
}

impl fmt::Display for MetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaMode::FirstOrder => "first-order",
            MetaMode::ExactHvp => "exact-hvp",
        })
    }
}

impl FromStr for MetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-order" | "first_order" => Ok(MetaMode::FirstOrder),
            "exact-hvp" | "exact_hvp" => Ok(MetaMode::ExactHvp),
            other => Err(Error::Invalid(format!("unknown meta mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Inner (virtual) step size.
    pub alpha: f64,
    /// Outer SGD learning rate.
    pub lr: f64,
    pub gamma_max: f64,
    pub rho: f64,
    pub epochs: usize,
    /// Windows sampled per domain per step.
    pub batch_size: usize,
    /// Number of meta-train domains per step.
    pub meta_train_domains: usize,
    pub meta_mode: MetaMode,
    /// Parameter-space displacement for the finite-difference HVP.
    pub hvp_step: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.005,
            lr: 0.01,
            gamma_max: 1.0,
            rho: 0.8,
            epochs: 12,
            batch_size: 64,
            meta_train_domains: 1,
            meta_mode: MetaMode::FirstOrder,
            hvp_step: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("train config: {m}")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.gamma_max >= 0.0 && self.gamma_max.is_finite()) {
            return bad(format!("gamma_max must be >= 0, got {}", self.gamma_max));
        }
        if self.batch_size == 0 || self.meta_train_domains == 0 {
            return bad("batch size and meta-train domain count must be positive".into());
        }
        if !(self.hvp_step > 0.0 && self.hvp_step.is_finite()) {
            return bad(format!("hvp_step must be positive, got {}", self.hvp_step));
        }
        Ok(())
    }

    fn step_config(&self, gamma: f64) -> StepConfig {
        StepConfig {
            alpha: self.alpha,
            gamma,
            lr: self.lr,
            mode: self.meta_mode,
            hvp_step: self.hvp_step,
        }
    }
}

/// `γ(e) = γ_max · (1 − ρ^e)`.
pub fn gamma_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.gamma_max * (1.0 - cfg.rho.powi(epoch.min(i32::MAX as usize) as i32))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSplit {
    pub meta_train: Vec<usize>,
    pub meta_test: Vec<usize>,
}

impl MetaSplit {
    pub fn new(meta_train: Vec<usize>, meta_test: Vec<usize>, num_domains: usize) -> Result<Self> {
        let mut all: Vec<usize> = meta_train.iter().chain(&meta_test).copied().collect();
        all.sort_unstable();
        if meta_train.is_empty() || meta_test.is_empty() || all != (0..num_domains).collect::<Vec<_>>() {
            return Err(Error::Invalid(format!(
                "meta split {meta_train:?} / {meta_test:?} is not a partition of {num_domains} domains"
            )));
        }
        Ok(Self { meta_train, meta_test })
    }

    /// Uniformly random split with `p` meta-train domains.
    pub fn sample<R: Rng>(rng: &mut R, num_domains: usize, p: usize) -> Result<Self> {
        if p == 0 || p >= num_domains {
            return Err(Error::Invalid(format!(
                "need 1 <= P < N domains, got P={p}, N={num_domains}"
            )));
        }
        let mut ids: Vec<usize> = (0..num_domains).collect();
        ids.shuffle(rng);
        let (tr, te) = ids.split_at(p);
        let (mut tr, mut te) = (tr.to_vec(), te.to_vec());
        tr.sort_unstable();
        te.sort_unstable();
        Self::new(tr, te, num_domains)
    }
}

/// One domain's minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub domain: usize,
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Mean negative log-likelihood of the labels under row-wise softmax.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let ce = g.cross_entropy(l, labels)?;
    g.value(ce).item()
}

/// Records the unweighted mean over domains of each domain's mean loss.
pub fn domain_avg_loss<F>(g: &mut Graph, vars: &ParamVars, batches: &[&DomainBatch], logits_fn: &F) -> Result<Var>
where
    F: Fn(&mut Graph, &ParamVars, Var) -> Result<Var>,
{
    if batches.is_empty() {
        return Err(Error::Invalid("domain average over an empty domain subset".into()));
    }
    let mut total: Option<Var> = None;
    for b in batches {
        let x = g.constant(b.x.clone());
        let logits = logits_fn(g, vars, x)?;
        let l = g.cross_entropy(logits, &b.labels)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    g.scale(total.expect("non-empty"), 1.0 / batches.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub mode: MetaMode,
    pub hvp_step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// `L_mtrain(Θ)`
    pub l_mtrain: f64,
    /// `L_mtest(Θ′)` at the inner-updated parameters.
    pub l_mtest: f64,
    pub grad_norm: f64,
}

/// Meta-gradient of the composite objective at `params`.
pub fn meta_gradient<F>(
    params: &ParamVector,
    meta_train: &[DomainBatch],
    meta_test: &[DomainBatch],
    step: &StepConfig,
    logits_fn: &F,
) -> Result<(ParamVector, StepReport)>
where
    F: Fn(&mut Graph, &ParamVars, Var) -> Result<Var>,
{
    let tr: Vec<&DomainBatch> = meta_train.iter().collect();
    let te: Vec<&DomainBatch> = meta_test.iter().collect();
    let tr_loss = |g: &mut Graph, v: &ParamVars| domain_avg_loss(g, v, &tr, logits_fn);
    let te_loss = |g: &mut Graph, v: &ParamVars| domain_avg_loss(g, v, &te, logits_fn);
    let diag = |what: &str, l_tr: f64, l_te: f64| {
        let ids = |b: &[DomainBatch]| b.iter().map(|d| d.domain).collect::<Vec<_>>();
        Error::NonFinite(format!(
            "{what}: L_mtrain={l_tr}, L_mtest={l_te}, meta-train domains {:?}, meta-test domains {:?}",
            ids(meta_train),
            ids(meta_test)
        ))
    };

    let (l_tr, g_tr) = value_and_grad(params, tr_loss)?;
    if !l_tr.is_finite() || !g_tr.all_finite() {
        return Err(diag("meta-train loss", l_tr, f64::NAN));
    }
    let inner = params.axpy(-step.alpha, &g_tr)?;
    let (l_te, g_te) = value_and_grad(&inner, te_loss)?;
    if !l_te.is_finite() || !g_te.all_finite() {
        return Err(diag("meta-test loss", l_tr, l_te));
    }
    let g = match step.mode {
        MetaMode::FirstOrder => g_tr.axpy(step.gamma, &g_te)?,
        MetaMode::ExactHvp => {
            // (I − αH) g_te, H the meta-train Hessian at Θ
            let n = g_te.norm();
            let corrected = if n > 0.0 && step.alpha != 0.0 {
                let hv = hvp(tr_loss, params, &g_te, step.hvp_step / n)?;
                g_te.axpy(-step.alpha, &hv)?
            } else {
                g_te
            };
            g_tr.axpy(step.gamma, &corrected)?
        }
    };
    if !g.all_finite() {
        return Err(diag("meta-gradient", l_tr, l_te));
    }
    let grad_norm = g.norm();
    Ok((
        g,
        StepReport {
            l_mtrain: l_tr,
            l_mtest: l_te,
            grad_norm,
        },
    ))
}

/// One outer SGD update.
pub fn mldg_step<F>(
    params: &ParamVector,
    meta_train: &[DomainBatch],
    meta_test: &[DomainBatch],
    step: &StepConfig,
    logits_fn: &F,
) -> Result<(ParamVector, StepReport)>
where
    F: Fn(&mut Graph, &ParamVars, Var) -> Result<Var>,
{
    let (g, report) = meta_gradient(params, meta_train, meta_test, step, logits_fn)?;
    Ok((params.axpy(-step.lr, &g)?, report))
}

/// Per-epoch means of the step reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_mtrain: f64,
    pub l_mtest: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,l_mtrain,l_mtest,gamma")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.l_mtrain, r.l_mtest, r.gamma)?;
        }
        Ok(())
    }
}

/// `ceil(n / (batch · N_domains))`, at least one.
pub fn steps_per_epoch(n: usize, batch: usize, num_domains: usize) -> usize {
    n.div_ceil(batch * num_domains).max(1)
}

/// Samples up to `batch` rows of one domain without replacement.
pub fn sample_domain_batch<R: Rng>(
    rng: &mut R,
    dataset: &WindowedDataset,
    members: &[usize],
    domain: usize,
    batch: usize,
) -> DomainBatch {
    let take = batch.min(members.len());
    let rows: Vec<usize> = index::sample(rng, members.len(), take)
        .into_iter()
        .map(|i| members[i])
        .collect();
    let (x, labels) = dataset.batch(&rows);
    DomainBatch { domain, x, labels }
}

/// Step-level callback: `(epoch, step, report)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, usize, &StepReport);

/// Trains encoder and head jointly with the meta objective.
pub fn train(
    dataset: &WindowedDataset,
    model: &Model,
    cfg: &TrainConfig,
    mut progress: Option<Progress<'_>>,
) -> Result<(Model, History)> {
    cfg.validate()?;
    let n_dom = dataset.num_domains;
    if n_dom < 2 || cfg.meta_train_domains >= n_dom {
        return Err(Error::Invalid(format!(
            "need at least 2 domains and P < N, got N={n_dom}, P={}",
            cfg.meta_train_domains
        )));
    }
    let members: Vec<Vec<usize>> = (0..n_dom).map(|d| dataset.domain_indices(d)).collect();
    if let Some(d) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::Invalid(format!("domain {d} has no windows")));
    }
    let mcfg = model.cfg.clone();
    let logits_fn = move |g: &mut Graph, v: &ParamVars, x: Var| logits_graph(g, &mcfg, v, x);
    let mut rng = rng_for(cfg.seed, "mldg.batches");
    let steps = steps_per_epoch(dataset.len(), cfg.batch_size, n_dom);
    let mut params = model.params();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let gamma = gamma_schedule(epoch, cfg);
        let step_cfg = cfg.step_config(gamma);
        let (mut sum_tr, mut sum_te) = (0.0, 0.0);
        for s in 0..steps {
            let split = MetaSplit::sample(&mut rng, n_dom, cfg.meta_train_domains)?;
            let mut draw = |ids: &[usize]| -> Vec<DomainBatch> {
                ids.iter()
                    .map(|&d| sample_domain_batch(&mut rng, dataset, &members[d], d, cfg.batch_size))
                    .collect()
            };
            let tr = draw(&split.meta_train);
            let te = draw(&split.meta_test);
            let (next, report) = mldg_step(&params, &tr, &te, &step_cfg, &logits_fn)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {s}: {e}")))?;
            params = next;
            sum_tr += report.l_mtrain;
            sum_te += report.l_mtest;
            if let Some(p) = progress.as_mut() {
                p(epoch, s, &report);
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            l_mtrain: sum_tr / steps as f64,
            l_mtest: sum_te / steps as f64,
            gamma,
        });
    }
    Ok((Model::from_params(&model.cfg, &params), history))
}
