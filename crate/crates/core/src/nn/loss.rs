use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::ModelParams;

/// Masked mean softmax cross-entropy and its gradient with respect to the
/// logits (zero on unmasked rows).
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<(f64, Matrix)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask("loss"));
    }
    let c = logits.cols;
    let mut grad = Matrix::zeros(logits.rows, c);
    let mut total = 0.0;
    let scale = 1.0 / count as f64;
    for i in (0..logits.rows).filter(|&i| mask[i]) {
        let y = labels[i];
        if y >= c {
            return Err(Error::Label {
                node: i,
                label: y,
                classes: c,
            });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = &mut grad.data[i * c..(i + 1) * c];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (row[k] - log_z).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((total * scale, grad))
}

/// Sum of squares over the elementary weights and biases of every layer.
pub fn elementary_norm_sq(params: &ModelParams) -> f64 {
    params
        .layers
        .iter()
        .map(|l| l.w.sum_sq() + l.b.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `cross_entropy + weight_decay · ‖θ_elementary‖²`.
pub fn loss_nll(
    logits: &Matrix,
    labels: &[usize],
    mask: &[bool],
    weight_decay: f64,
    params: &ModelParams,
) -> Result<f64> {
    let (ce, _) = cross_entropy(logits, labels, mask)?;
    Ok(ce + weight_decay * elementary_norm_sq(params))
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for row in out.data.chunks_mut(logits.cols.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let idx: Vec<usize> = (0..logits.rows).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask("accuracy"));
    }
    let hits = idx.iter().filter(|&&i| logits.argmax_row(i) == labels[i]).count();
    Ok(hits as f64 / idx.len() as f64)
}
