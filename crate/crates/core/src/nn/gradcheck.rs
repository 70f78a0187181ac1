//! Central finite-difference checking.
//!
//! The numeric side only ever calls `forward` and the loss; it shares no
//! code with `backward`. Coordinates whose perturbation flips a ReLU sign
//! are reported as kink crossings and excluded, since the loss is not
//! differentiable there.

use std::sync::Arc;

use super::{backward, forward, loss, ModelParams, Mode};
use crate::error::Result;
use crate::graph::NormalizedAdjacency;
use crate::hyper::HyperVector;
use crate::linalg::Matrix;

/// One loss evaluation at a perturbed point.
pub struct Probe {
    pub loss: f64,
    pub relu_pattern: Vec<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub below_magnitude: usize,
    pub kink_crossings: usize,
    pub failures: Vec<String>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.below_magnitude += other.below_magnitude;
        self.kink_crossings += other.kink_crossings;
        self.failures.extend(other.failures);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub min_magnitude: f64,
    pub tolerance: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            min_magnitude: 1e-6,
            tolerance: 1e-4,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

impl GradCheck {
    /// Compares one analytic coordinate with `(f(+h) - f(-h)) / 2h`, where
    /// `f(δ)` evaluates the loss with that coordinate shifted by `δ`.
    pub fn coordinate(
        &self,
        report: &mut GradCheckReport,
        label: &str,
        analytic: f64,
        base_pattern: &[bool],
        mut f: impl FnMut(f64) -> Result<Probe>,
    ) -> Result<()> {
        let plus = f(self.step)?;
        let minus = f(-self.step)?;
        if plus.relu_pattern != base_pattern || minus.relu_pattern != base_pattern {
            report.kink_crossings += 1;
            return Ok(());
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * self.step);
        if analytic.abs().max(numeric.abs()) <= self.min_magnitude {
            report.below_magnitude += 1;
            return Ok(());
        }
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if err >= self.tolerance {
            report.failures.push(format!("{label}: analytic {analytic:e} numeric {numeric:e} rel {err:e}"));
        }
        Ok(())
    }
}

/// Loss setup shared by the analytic and numeric sides.
pub struct LossSpec<'a> {
    pub labels: &'a [usize],
    pub mask: &'a [bool],
    pub with_decay: bool,
}

fn evaluate(
    params: &ModelParams,
    adj: &Arc<NormalizedAdjacency>,
    x: &Matrix,
    hyper: &HyperVector,
    mode: Mode,
    seed: u64,
    spec: &LossSpec<'_>,
) -> Result<Probe> {
    let (logits, trace) = forward(params, adj, x, hyper, mode, seed)?;
    let decay = if spec.with_decay { hyper.weight_decay() } else { 0.0 };
    let loss = loss::loss_nll(&logits, spec.labels, spec.mask, decay, params)?;
    Ok(Probe {
        loss,
        relu_pattern: trace.relu_pattern(),
    })
}

/// Checks every elementary and hypernet parameter of `params`.
#[allow(clippy::too_many_arguments)]
pub fn check_params(
    check: &GradCheck,
    params: &ModelParams,
    adj: &Arc<NormalizedAdjacency>,
    x: &Matrix,
    hyper: &HyperVector,
    mode: Mode,
    seed: u64,
    spec: &LossSpec<'_>,
) -> Result<GradCheckReport> {
    let (logits, trace) = forward(params, adj, x, hyper, mode, seed)?;
    let (_, dlogits) = loss::cross_entropy(&logits, spec.labels, spec.mask)?;
    let grads = backward(&trace, params, &dlogits, spec.with_decay)?;
    let base = trace.relu_pattern();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|t| t.to_vec()).collect();

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for (k, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let original = params.tensors()[k][i];
            check.coordinate(&mut report, &format!("{}[{i}]", names[k]), a, &base, |delta| {
                probe.tensors_mut()[k][i] = original + delta;
                let r = evaluate(&probe, adj, x, hyper, mode, seed, spec);
                probe.tensors_mut()[k][i] = original;
                r
            })?;
        }
    }
    Ok(report)
}

/// Checks the direct gradient with respect to the unconstrained
/// hyperparameters `u` (hypernet path, relaxed dropout, weight decay).
#[allow(clippy::too_many_arguments)]
pub fn check_hyper_direct(
    check: &GradCheck,
    params: &ModelParams,
    adj: &Arc<NormalizedAdjacency>,
    x: &Matrix,
    hyper: &HyperVector,
    mode: Mode,
    seed: u64,
    spec: &LossSpec<'_>,
) -> Result<GradCheckReport> {
    let (logits, trace) = forward(params, adj, x, hyper, mode, seed)?;
    let (_, dlogits) = loss::cross_entropy(&logits, spec.labels, spec.mask)?;
    let grads = backward(&trace, params, &dlogits, spec.with_decay)?;
    let base = trace.relu_pattern();
    let mut report = GradCheckReport::default();
    for (k, &a) in grads.hyper_u.iter().enumerate() {
        let label = format!("u[{}]", params.space.dims[k].name);
        check.coordinate(&mut report, &label, a, &base, |delta| {
            let mut u = hyper.u.clone();
            u[k] += delta;
            evaluate(params, adj, x, &params.space.vector(u), mode, seed, spec)
        })?;
    }
    Ok(report)
}
