//! Self-tuning GCN: parameters, forward pass and exact reverse-mode gradients.
//!
//! For an L-layer model with standardized hyperparameters `z`:
//!
//! ```text
//! H⁰   = X
//! Zˡ   = Â Hˡ Ŵˡ(z) + b̂ˡ(z)
//! Hˡ⁺¹ = dropout(ReLU(Zˡ), pˡ)        l < L-1
//! out  = Z^{L-1}                       (softmax is folded into the loss)
//! ```

pub mod adam;
pub mod checkpoint;
pub mod dropout;
pub mod gradcheck;
mod layer;
pub mod loss;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layer::{SelfTuningLayer, HYPER_INIT_SCALE, LAYER_TENSORS};

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, Provenance};
use crate::hyper::{HyperKind, HyperSpace, HyperVector};
use crate::linalg::Matrix;
use crate::rng::mix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<SelfTuningLayer>,
    pub space: HyperSpace,
}

impl ModelParams {
    /// Layer widths `(features, hidden, …, hidden, classes)` with `num_layers` layers.
    pub fn dims(features: usize, hidden: usize, classes: usize, num_layers: usize) -> Vec<usize> {
        let mut d = vec![features];
        d.extend(std::iter::repeat_n(hidden, num_layers.saturating_sub(1)));
        d.push(classes);
        d
    }

    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::Config(format!(
                "a model needs at least 2 layers, got {}",
                dims.len().saturating_sub(1)
            )));
        }
        let space = HyperSpace::for_layers(dims.len() - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| SelfTuningLayer::init(w[0], w[1], space.len(), &mut rng))
            .collect();
        Ok(Self { layers, space })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| SelfTuningLayer::zeros(l.fan_in(), l.fan_out(), l.q()))
                .collect(),
            space: self.space.clone(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    /// `(name, shape, data)` for every tensor, e.g. `layer3.w_hyper`.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for ((name, shape), data) in LAYER_TENSORS.iter().zip(l.shapes()).zip(l.tensors()) {
                out.push((format!("layer{i}.{name}"), shape, data));
            }
        }
        out
    }

    /// Whether tensor `k` (in `tensors()` order) belongs to the hypernet.
    pub fn is_hypernet_tensor(k: usize) -> bool {
        k % LAYER_TENSORS.len() >= 2
    }

    /// Zeroes every hyper-embedding, turning each layer into a plain GCN layer.
    pub fn zero_embeddings(&mut self) {
        for l in &mut self.layers {
            l.e_w.data.iter_mut().for_each(|v| *v = 0.0);
            l.e_b.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// FNV-1a over the bit patterns of the elementary and hypernet tensors.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// What one layer recorded during the forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub input: Matrix,
    pub w_eff: Matrix,
    pub c_w: Vec<f64>,
    pub c_b: Vec<f64>,
    pub pre: Matrix,
    /// ReLU output (hidden layers).
    pub relu: Option<Matrix>,
    /// Dropout keep multipliers and their derivative in the rate (train mode).
    pub keep: Option<(Matrix, Matrix)>,
}

/// Everything reverse mode needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub hyper: HyperVector,
    pub adjacency: Arc<NormalizedAdjacency>,
    pub layers: Vec<LayerTrace>,
    pub logits: Matrix,
}

impl ForwardTrace {
    /// Sign pattern of every hidden pre-activation.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .filter(|l| l.relu.is_some())
            .flat_map(|l| l.pre.data.iter().map(|&v| v > 0.0))
            .collect()
    }
}

pub fn forward(
    params: &ModelParams,
    adj: &Arc<NormalizedAdjacency>,
    x: &Matrix,
    hyper: &HyperVector,
    mode: Mode,
    seed: u64,
) -> Result<(Matrix, ForwardTrace)> {
    if x.rows != adj.n() {
        return Err(Error::Shape(format!("{} feature rows for {} nodes", x.rows, adj.n())));
    }
    if hyper.len() != params.space.len() {
        return Err(Error::Shape(format!(
            "hyperparameter vector has {} entries, model expects {}",
            hyper.len(),
            params.space.len()
        )));
    }
    match (mode, adj.provenance) {
        (Mode::Eval, Provenance::Dropped { .. }) => {
            return Err(Error::Config("eval-mode forward requires the full adjacency".into()));
        }
        (Mode::Train, Provenance::Full) if hyper.edge_drop() > 0.0 => {
            return Err(Error::Config(
                "train-mode forward with a positive edge-drop rate requires a dropped adjacency".into(),
            ));
        }
        _ => {}
    }

    let last = params.num_layers() - 1;
    let mut traces = Vec::with_capacity(params.num_layers());
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        if h.cols != layer.fan_in() {
            return Err(Error::Shape(format!(
                "layer {l} expects {} inputs, got {}",
                layer.fan_in(),
                h.cols
            )));
        }
        let (c_w, c_b) = layer.embeddings(&hyper.z)?;
        let (w_eff, b_eff) = layer.effective_from(&c_w, &c_b);
        let mut pre = adj.matrix.matmul(&h.matmul(&w_eff));
        pre.add_row_vector(&b_eff);
        if !pre.is_finite() {
            return Err(Error::NonFinite(format!("layer {l} activations")));
        }
        let input = std::mem::replace(&mut h, Matrix::zeros(0, 0));
        if l == last {
            traces.push(LayerTrace {
                input,
                w_eff,
                c_w,
                c_b,
                pre: pre.clone(),
                relu: None,
                keep: None,
            });
            h = pre;
        } else {
            let mut relu = pre.clone();
            relu.data.iter_mut().for_each(|v| *v = v.max(0.0));
            let (out, keep) = match mode {
                Mode::Eval => (relu.clone(), None),
                Mode::Train => {
                    let p = hyper.dropout(l);
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, l as u64]));
                    let noise = dropout::draw_noise(&mut rng, relu.data.len());
                    let mut m = Matrix::zeros(relu.rows, relu.cols);
                    let mut dm = Matrix::zeros(relu.rows, relu.cols);
                    for (k, &z) in noise.iter().enumerate() {
                        let (a, b) = dropout::keep(p, z);
                        m.data[k] = a;
                        dm.data[k] = b;
                    }
                    let mut out = relu.clone();
                    out.data.iter_mut().zip(&m.data).for_each(|(v, k)| *v *= k);
                    (out, Some((m, dm)))
                }
            };
            traces.push(LayerTrace {
                input,
                w_eff,
                c_w,
                c_b,
                pre,
                relu: Some(relu),
                keep,
            });
            h = out;
        }
    }
    let trace = ForwardTrace {
        mode,
        hyper: hyper.clone(),
        adjacency: Arc::clone(adj),
        layers: traces,
        logits: h.clone(),
    };
    Ok((h, trace))
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: ModelParams,
    /// Gradient with respect to the unconstrained hyperparameters `u`.
    pub hyper_u: Vec<f64>,
}

/// Reverse pass from `∂L/∂logits`.
///
/// When `with_decay` is set the loss is taken to include
/// `λ_wd · ‖θ_elementary‖²` and its gradients are added.
#[allow(clippy::needless_range_loop)]
pub fn backward(trace: &ForwardTrace, params: &ModelParams, dlogits: &Matrix, with_decay: bool) -> Result<Gradients> {
    if trace.layers.len() != params.num_layers() {
        return Err(Error::Shape(format!(
            "trace has {} layers, parameters have {}",
            trace.layers.len(),
            params.num_layers()
        )));
    }
    for (l, (t, p)) in trace.layers.iter().zip(&params.layers).enumerate() {
        if t.w_eff.shape() != p.w.shape() || t.c_w.len() != p.fan_out() {
            return Err(Error::Shape(format!("trace/parameter mismatch at layer {l}")));
        }
    }
    if dlogits.shape() != trace.logits.shape() {
        return Err(Error::Shape("logit gradient shape".into()));
    }
    let space = &params.space;
    let q = space.len();
    let mut grads = params.zeros_like();
    let mut dz = vec![0.0; q];
    let mut du = vec![0.0; q];
    let adj = &trace.adjacency.matrix;

    let mut upstream = dlogits.clone();
    for l in (0..params.num_layers()).rev() {
        let t = &trace.layers[l];
        let p = &params.layers[l];
        let g = &mut grads.layers[l];

        let dpre = match (&t.relu, &t.keep) {
            (None, _) => upstream,
            (Some(relu), keep) => {
                let mut da = upstream;
                if let Some((m, dm)) = keep {
                    let mut dp = 0.0;
                    for k in 0..da.data.len() {
                        dp += da.data[k] * relu.data[k] * dm.data[k];
                        da.data[k] *= m.data[k];
                    }
                    du[l] += dp * space.dims[l].kind.constrain_grad(trace.hyper.u[l]);
                }
                for (d, &z) in da.data.iter_mut().zip(&t.pre.data) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                da
            }
        };

        // b̂ = b + b_hyper ⊙ c_b
        let db_eff = dpre.column_sums();
        let mut dc_b = vec![0.0; p.fan_out()];
        for j in 0..p.fan_out() {
            g.b[j] = db_eff[j];
            g.b_hyper[j] = db_eff[j] * t.c_b[j];
            dc_b[j] = db_eff[j] * p.b_hyper[j];
        }

        // Z = Â (H Ŵ) + b̂, Â symmetric
        let dhw = adj.matmul(&dpre);
        let dw_eff = t.input.t_matmul(&dhw);
        if l > 0 {
            upstream = dhw.matmul_t(&t.w_eff);
        } else {
            upstream = Matrix::zeros(0, 0);
        }

        // Ŵ = W + W_hyper ⊙_col c_w
        let cols = p.fan_out();
        let mut dc_w = vec![0.0; cols];
        for i in 0..p.fan_in() {
            for j in 0..cols {
                let k = i * cols + j;
                let d = dw_eff.data[k];
                g.w.data[k] = d;
                g.w_hyper.data[k] = d * t.c_w[j];
                dc_w[j] += d * p.w_hyper.data[k];
            }
        }

        // c = E z
        for j in 0..cols {
            for k in 0..q {
                g.e_w.data[j * q + k] = dc_w[j] * trace.hyper.z[k];
                g.e_b.data[j * q + k] = dc_b[j] * trace.hyper.z[k];
                dz[k] += dc_w[j] * p.e_w.data[j * q + k] + dc_b[j] * p.e_b.data[j * q + k];
            }
        }
    }

    for k in 0..q {
        du[k] += dz[k] * space.dims[k].kind.standardize_grad();
    }

    if with_decay {
        let wd = trace.hyper.weight_decay();
        for (g, p) in grads.layers.iter_mut().zip(&params.layers) {
            for (gv, pv) in g.w.data.iter_mut().zip(&p.w.data) {
                *gv += 2.0 * wd * pv;
            }
            for (gv, pv) in g.b.iter_mut().zip(&p.b) {
                *gv += 2.0 * wd * pv;
            }
        }
        let k = space.index_of(HyperKind::WeightDecay).expect("weight decay dimension");
        du[k] += loss::elementary_norm_sq(params) * space.dims[k].kind.constrain_grad(trace.hyper.u[k]);
    }

    Ok(Gradients {
        params: grads,
        hyper_u: du,
    })
}
