//! Alternating optimization of model parameters and hyperparameters.
//!
//! A model epoch samples `λ ~ P(λ | μ, σ)`, drops edges at the sampled rate
//! and takes one Adam step on every layer tensor against the training loss
//! (cross-entropy plus weight decay). A hyper epoch samples again with
//! recorded noise, evaluates the validation cross-entropy minus `τ · H[P]`
//! and takes one Adam step on `(μ, σ)` through the response function, the
//! relaxed dropout masks and the reparameterized sampler.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{drop_edge, normalize, Graph, MaskKind, NormalizedAdjacency};
use crate::hyper::{HyperDistribution, HyperKind, HyperSpace, HyperVector, SigmaBounds};
use crate::linalg::Matrix;
use crate::nn::adam::AdamState;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{backward, forward, loss, ModelParams, Mode};
use crate::rng::{Seeds, Stream};

/// A graph together with its full normalized adjacency, shared read-only.
#[derive(Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub full: Arc<NormalizedAdjacency>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graph: Graph) -> Self {
        let full = Arc::new(normalize(&graph));
        Self {
            name: name.into(),
            graph,
            full,
        }
    }

    pub fn mask(&self, kind: MaskKind) -> &[bool] {
        self.graph.masks.get(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Model,
    Hyper,
}

impl Phase {
    pub fn code(self) -> &'static str {
        match self {
            Phase::Model => "M",
            Phase::Hyper => "H",
        }
    }
}

/// `(T_trn, T_val)`: model epochs followed by hyper epochs, repeated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub model_epochs: u64,
    pub hyper_epochs: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            model_epochs: 2,
            hyper_epochs: 1,
        }
    }
}

impl Schedule {
    /// Phase of global epoch `epoch` (0-based).
    pub fn phase(&self, epoch: u64) -> Phase {
        if epoch % (self.model_epochs + self.hyper_epochs) < self.model_epochs {
            Phase::Model
        } else {
            Phase::Hyper
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate of the layer tensors.
    pub lr_model: f64,
    /// Learning rate of the distribution centers `μ`.
    pub lr_hyper: f64,
    /// Learning rate of the distribution half-widths `σ`.
    pub lr_scale: f64,
    /// Entropy weight.
    pub tau: f64,
    pub schedule: Schedule,
    /// Sample `λ` and run hyper epochs. When false the model trains at the
    /// fixed center `λ = constrain(μ)` with the hypernet frozen.
    pub self_tuning: bool,
    /// Keep hypernet tensors at their current values.
    pub freeze_hypernet: bool,
    /// Run hyper epochs (ignored unless `self_tuning`).
    pub hyper_training: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_model: 0.0005,
            lr_hyper: 0.01,
            lr_scale: 0.01,
            tau: 0.001,
            schedule: Schedule::default(),
            self_tuning: true,
            freeze_hypernet: false,
            hyper_training: true,
        }
    }
}

impl TrainConfig {
    /// Plain GCN + DropEdge at fixed hyperparameters.
    pub fn plain(lr_model: f64) -> Self {
        Self {
            lr_model,
            self_tuning: false,
            freeze_hypernet: true,
            hyper_training: false,
            tau: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_model < 0.0 || self.lr_hyper < 0.0 || self.lr_scale < 0.0 || self.tau < 0.0 {
            return Err(Error::Config("learning rates and tau must be non-negative".into()));
        }
        if self.schedule.model_epochs == 0 || self.schedule.hyper_epochs == 0 {
            return Err(Error::Config("schedule needs at least one model and one hyper epoch".into()));
        }
        Ok(())
    }

    fn phase(&self, epoch: u64) -> Phase {
        if self.self_tuning && self.hyper_training {
            self.schedule.phase(epoch)
        } else {
            Phase::Model
        }
    }
}

/// How the hyperparameter distribution is initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperInit {
    /// Centers drawn uniformly in the unconstrained initialization box.
    Uniform,
    /// Explicit constrained values.
    Fixed {
        dropout: f64,
        edge_drop: f64,
        weight_decay: f64,
    },
}

impl HyperInit {
    pub fn centers(&self, space: &HyperSpace, seeds: &Seeds) -> Result<Vec<f64>> {
        match *self {
            HyperInit::Uniform => Ok(space.uniform_point(&mut seeds.rng(Stream::Init, &[0x4A11]))),
            HyperInit::Fixed {
                dropout,
                edge_drop,
                weight_decay,
            } => {
                let lambda: Vec<f64> = space
                    .dims
                    .iter()
                    .map(|d| match d.kind {
                        HyperKind::DropoutRate => dropout,
                        HyperKind::EdgeDropRate => edge_drop,
                        HyperKind::WeightDecay => weight_decay,
                    })
                    .collect();
                if !space.contains(&lambda) || lambda.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Config(format!("initial hyperparameters {lambda:?} outside the search space")));
                }
                Ok(space.unconstrain(&lambda))
            }
        }
    }
}

/// Per-agent training state: everything a checkpoint must carry.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub dist: HyperDistribution,
    pub model_adam: AdamState,
    pub hyper_adam: AdamState,
    /// Global epoch counter (epochs completed).
    pub epoch: u64,
    pub config: TrainConfig,
    pub seeds: Seeds,
}

/// Deterministic metrics at the distribution center with the full adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub phase: Phase,
    /// Value of the objective the phase optimized (sampled).
    pub objective: f64,
    pub metrics: EvalMetrics,
    /// Constrained center `constrain(μ)` after the epoch.
    pub lambda: Vec<f64>,
}

impl TrainState {
    pub fn new(dims: &[usize], config: TrainConfig, seeds: Seeds, init: &HyperInit, sigma: f64, bounds: SigmaBounds) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(dims, seeds.derive(Stream::Init, &[0]))?;
        let mu = init.centers(&params.space, &seeds)?;
        let dist = HyperDistribution::new(mu, sigma, bounds);
        Ok(Self::from_parts(params, dist, config, seeds))
    }

    pub fn from_parts(params: ModelParams, dist: HyperDistribution, config: TrainConfig, seeds: Seeds) -> Self {
        let model_adam = AdamState::new(&params.tensor_sizes());
        let hyper_adam = AdamState::new(&[dist.len(), dist.len()]);
        Self {
            params,
            dist,
            model_adam,
            hyper_adam,
            epoch: 0,
            config,
            seeds,
        }
    }

    pub fn space(&self) -> &HyperSpace {
        &self.params.space
    }

    /// Hyperparameters used by a model epoch.
    fn model_hyper(&self, attempt: u64) -> HyperVector {
        if self.config.self_tuning {
            self.dist
                .sample(self.space(), self.seeds.derive(Stream::Hyper, &[self.epoch, attempt]))
                .0
        } else {
            self.dist.center(self.space())
        }
    }

    fn dropped(&self, data: &Dataset, rate: f64, attempt: u64) -> Result<Arc<NormalizedAdjacency>> {
        let seed = self.seeds.derive(Stream::Edge, &[self.epoch, attempt]);
        Ok(Arc::new(drop_edge(&data.graph, rate, seed)?))
    }

    /// One Adam step on the layer tensors; `μ, σ` untouched.
    pub fn model_training_epoch(&mut self, data: &Dataset) -> Result<f64> {
        self.model_epoch_attempt(data, 0)
    }

    fn model_epoch_attempt(&mut self, data: &Dataset, attempt: u64) -> Result<f64> {
        let hyper = self.model_hyper(attempt);
        let adj = self.dropped(data, hyper.edge_drop(), attempt)?;
        let dropout_seed = self.seeds.derive(Stream::Dropout, &[self.epoch, attempt]);
        let x = &data.graph.features;
        let (logits, trace) = forward(&self.params, &adj, x, &hyper, Mode::Train, dropout_seed)?;
        let mask = data.mask(MaskKind::Train);
        let (ce, dlogits) = loss::cross_entropy(&logits, &data.graph.labels, mask)?;
        let value = ce + hyper.weight_decay() * loss::elementary_norm_sq(&self.params);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", self.epoch)));
        }
        let grads = backward(&trace, &self.params, &dlogits, true)?;
        let frozen = self.config.freeze_hypernet || !self.config.self_tuning;
        let lrs: Vec<f64> = (0..self.model_adam.m.len())
            .map(|k| {
                if frozen && ModelParams::is_hypernet_tensor(k) {
                    0.0
                } else {
                    self.config.lr_model
                }
            })
            .collect();
        let g = grads.params.tensors();
        self.model_adam.step(&mut self.params.tensors_mut(), &g, &lrs)?;
        Ok(value)
    }

    /// One Adam step on `(μ, σ)`; layer tensors untouched.
    pub fn hyper_training_epoch(&mut self, data: &Dataset) -> Result<f64> {
        self.hyper_epoch_attempt(data, 0)
    }

    fn hyper_epoch_attempt(&mut self, data: &Dataset, attempt: u64) -> Result<f64> {
        let seeds = &self.seeds;
        let noise_seed = seeds.derive(Stream::Hyper, &[self.epoch, attempt]);
        let (hyper, noise) = self.dist.sample(self.space(), noise_seed);
        let adj = self.dropped(data, hyper.edge_drop(), attempt)?;
        let dropout_seed = self.seeds.derive(Stream::Dropout, &[self.epoch, attempt]);
        let (value, grad_mu, grad_sigma) = hyper_objective_grad(
            &self.params,
            &self.dist,
            &adj,
            data,
            &hyper,
            &noise,
            dropout_seed,
            self.config.tau,
        )?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("validation objective at epoch {}", self.epoch)));
        }
        let lrs = [self.config.lr_hyper, self.config.lr_scale];
        let HyperDistribution { mu, sigma, .. } = &mut self.dist;
        self.hyper_adam.step(&mut [mu.as_mut_slice(), sigma.as_mut_slice()], &[&grad_mu, &grad_sigma], &lrs)?;
        self.dist.clamp_sigma();
        Ok(value)
    }

    /// Runs one epoch of whichever phase the schedule assigns, retrying once
    /// with fresh randomness if the first attempt diverges.
    pub fn step_epoch(&mut self, data: &Dataset) -> Result<(Phase, f64)> {
        let phase = self.config.phase(self.epoch);
        let run = |s: &mut Self, attempt| match phase {
            Phase::Model => s.model_epoch_attempt(data, attempt),
            Phase::Hyper => s.hyper_epoch_attempt(data, attempt),
        };
        let value = match run(self, 0) {
            Ok(v) => v,
            Err(first) => {
                log::warn!("epoch {} ({}) failed: {first}; retrying", self.epoch, phase.code());
                run(self, 1).map_err(|second| {
                    Error::Diverged(format!("epoch {} failed twice: {first}; {second}", self.epoch))
                })?
            }
        };
        self.epoch += 1;
        Ok((phase, value))
    }

    /// Runs `n` epochs, evaluating after each.
    pub fn run_epochs(&mut self, data: &Dataset, n: u64) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let (phase, objective) = self.step_epoch(data)?;
            let metrics = self.metrics(data)?;
            out.push(EpochRecord {
                epoch: self.epoch - 1,
                phase,
                objective,
                metrics,
                lambda: self.space().constrain(&self.dist.mu),
            });
        }
        Ok(out)
    }

    /// Alternates phases until `max_epochs` epochs have been completed.
    pub fn alternate_loop(&mut self, data: &Dataset, max_epochs: u64) -> Result<Vec<EpochRecord>> {
        let remaining = max_epochs.saturating_sub(self.epoch);
        self.run_epochs(data, remaining)
    }

    pub fn metrics(&self, data: &Dataset) -> Result<EvalMetrics> {
        evaluate_metrics(&self.params, &self.dist, data)
    }

    pub fn evaluate(&self, data: &Dataset, kind: MaskKind) -> Result<f64> {
        evaluate(&self.params, &self.dist, data, kind)
    }

    /// FNV checksum of `(μ, σ)`.
    pub fn dist_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.dist.mu.iter().chain(&self.dist.sigma) {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Copies everything except identity (seeds) from `other`.
    pub fn copy_from(&mut self, other: &TrainState) {
        self.params = other.params.clone();
        self.dist = other.dist.clone();
        self.model_adam = other.model_adam.clone();
        self.hyper_adam = other.hyper_adam.clone();
        self.epoch = other.epoch;
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        self.params.write_to(&mut c, "params.");
        let q = self.dist.len();
        c.push("dist.mu", vec![q], &self.dist.mu);
        c.push("dist.sigma", vec![q], &self.dist.sigma);
        c.push("dist.sigma_bounds", vec![2], &[self.dist.bounds.min, self.dist.bounds.max]);
        for (name, adam) in [("adam.model", &self.model_adam), ("adam.hyper", &self.hyper_adam)] {
            c.push_scalar(format!("{name}.t"), adam.t as f64);
            for (k, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
                c.push(format!("{name}.m{k}"), vec![m.len()], m);
                c.push(format!("{name}.v{k}"), vec![v.len()], v);
            }
        }
        c.push_scalar("epoch", self.epoch as f64);
        c
    }

    /// Restores a state written by `to_checkpoint` into a state of identical shape.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        self.params.read_from(c, "params.")?;
        let q = self.dist.len();
        self.dist.mu.copy_from_slice(c.data("dist.mu", q)?);
        self.dist.sigma.copy_from_slice(c.data("dist.sigma", q)?);
        let b = c.data("dist.sigma_bounds", 2)?;
        self.dist.bounds = SigmaBounds { min: b[0], max: b[1] };
        for (name, adam) in [("adam.model", &mut self.model_adam), ("adam.hyper", &mut self.hyper_adam)] {
            adam.t = c.scalar(&format!("{name}.t"))? as u64;
            for k in 0..adam.m.len() {
                let n = adam.m[k].len();
                adam.m[k].copy_from_slice(c.data(&format!("{name}.m{k}"), n)?);
                adam.v[k].copy_from_slice(c.data(&format!("{name}.v{k}"), n)?);
            }
        }
        self.epoch = c.scalar("epoch")? as u64;
        Ok(())
    }
}

/// Validation objective `CE_val − τ·H[P]` and its gradients in `(μ, σ)` for
/// a fixed sample (`noise`, edge mask, dropout seed).
#[allow(clippy::too_many_arguments)]
pub fn hyper_objective_grad(
    params: &ModelParams,
    dist: &HyperDistribution,
    adj: &Arc<NormalizedAdjacency>,
    data: &Dataset,
    hyper: &HyperVector,
    noise: &[f64],
    dropout_seed: u64,
    tau: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (logits, trace) = forward(params, adj, &data.graph.features, hyper, Mode::Train, dropout_seed)?;
    let (ce, dlogits) = loss::cross_entropy(&logits, &data.graph.labels, data.mask(MaskKind::Val))?;
    let value = ce - tau * dist.entropy()?;
    let grads = backward(&trace, params, &dlogits, false)?;
    let grad_mu = grads.hyper_u.clone();
    let grad_sigma = grads
        .hyper_u
        .iter()
        .zip(noise)
        .zip(dist.entropy_grad())
        .map(|((g, e), h)| g * e - tau * h)
        .collect();
    Ok((value, grad_mu, grad_sigma))
}

/// The same objective evaluated forward-only, for finite differences.
#[allow(clippy::too_many_arguments)]
pub fn hyper_objective(
    params: &ModelParams,
    dist: &HyperDistribution,
    adj: &Arc<NormalizedAdjacency>,
    data: &Dataset,
    noise: &[f64],
    dropout_seed: u64,
    tau: f64,
) -> Result<(f64, Vec<bool>)> {
    let hyper = dist.sample_with(&params.space, noise);
    let (logits, trace) = forward(params, adj, &data.graph.features, &hyper, Mode::Train, dropout_seed)?;
    let (ce, _) = loss::cross_entropy(&logits, &data.graph.labels, data.mask(MaskKind::Val))?;
    Ok((ce - tau * dist.entropy()?, trace.relu_pattern()))
}

fn eval_logits(params: &ModelParams, dist: &HyperDistribution, data: &Dataset) -> Result<Matrix> {
    let hyper = dist.center(&params.space);
    let (logits, _) = forward(params, &data.full, &data.graph.features, &hyper, Mode::Eval, 0)?;
    Ok(logits)
}

/// Accuracy on one split at the distribution center, no dropout, full graph.
pub fn evaluate(params: &ModelParams, dist: &HyperDistribution, data: &Dataset, kind: MaskKind) -> Result<f64> {
    let mask = data.mask(kind);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask(kind.name()));
    }
    loss::accuracy(&eval_logits(params, dist, data)?, &data.graph.labels, mask)
}

pub fn evaluate_metrics(params: &ModelParams, dist: &HyperDistribution, data: &Dataset) -> Result<EvalMetrics> {
    let logits = eval_logits(params, dist, data)?;
    let labels = &data.graph.labels;
    let (train_loss, _) = loss::cross_entropy(&logits, labels, data.mask(MaskKind::Train))?;
    let (val_loss, _) = loss::cross_entropy(&logits, labels, data.mask(MaskKind::Val))?;
    let val_acc = loss::accuracy(&logits, labels, data.mask(MaskKind::Val))?;
    let test_mask = data.mask(MaskKind::Test);
    let test_acc = if test_mask.iter().any(|&m| m) {
        Some(loss::accuracy(&logits, labels, test_mask)?)
    } else {
        None
    };
    Ok(EvalMetrics {
        train_loss,
        val_loss,
        val_acc,
        test_acc,
    })
}

/// Writes `epoch,phase,train_loss,val_loss,val_acc,<λ columns>` rows.
pub fn write_history_csv<W: Write>(mut w: W, space: &HyperSpace, history: &[EpochRecord]) -> std::io::Result<()> {
    write!(w, "epoch,phase,train_loss,val_loss,val_acc")?;
    for name in space.names() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for r in history {
        write!(
            w,
            "{},{},{},{},{}",
            r.epoch,
            r.phase.code(),
            r.metrics.train_loss,
            r.metrics.val_loss,
            r.metrics.val_acc
        )?;
        for v in &r.lambda {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Trailing moving average over `window` points (shorter at the start).
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
