use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scale applied to the Glorot limit when initializing the hypernet
/// weights `w_hyper` and `b_hyper`.
pub const HYPER_INIT_SCALE: f64 = 0.1;

/// A graph-convolution layer whose weights respond affinely to the
/// hyperparameters:
///
/// ```text
/// Ŵ(z) = W + W_hyper ⊙_col (E_w z)
/// b̂(z) = b + b_hyper ⊙ (E_b z)
/// ```
///
/// `z` is the standardized hyperparameter vector. Column `j` of `W_hyper`
/// is scaled by the `j`-th entry of `E_w z`, i.e. the rescaling runs over
/// the output dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTuningLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub w_hyper: Matrix,
    pub b_hyper: Vec<f64>,
    pub e_w: Matrix,
    pub e_b: Matrix,
}

pub const LAYER_TENSORS: [&str; 6] = ["w", "b", "w_hyper", "b_hyper", "e_w", "e_b"];

impl SelfTuningLayer {
    pub fn zeros(fan_in: usize, fan_out: usize, q: usize) -> Self {
        Self {
            w: Matrix::zeros(fan_in, fan_out),
            b: vec![0.0; fan_out],
            w_hyper: Matrix::zeros(fan_in, fan_out),
            b_hyper: vec![0.0; fan_out],
            e_w: Matrix::zeros(fan_out, q),
            e_b: Matrix::zeros(fan_out, q),
        }
    }

    /// Glorot-uniform `W`, zero `b`, down-scaled Glorot hypernet weights and
    /// zero embeddings, so a fresh layer behaves as a plain GCN layer.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, q: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut layer = Self::zeros(fan_in, fan_out, q);
        for v in &mut layer.w.data {
            *v = rng.gen_range(-limit..limit);
        }
        let hl = limit * HYPER_INIT_SCALE;
        for v in &mut layer.w_hyper.data {
            *v = rng.gen_range(-hl..hl);
        }
        for v in &mut layer.b_hyper {
            *v = rng.gen_range(-hl..hl);
        }
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols
    }

    pub fn q(&self) -> usize {
        self.e_w.cols
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.w.data,
            &self.b,
            &self.w_hyper.data,
            &self.b_hyper,
            &self.e_w.data,
            &self.e_b.data,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w.data,
            &mut self.b,
            &mut self.w_hyper.data,
            &mut self.b_hyper,
            &mut self.e_w.data,
            &mut self.e_b.data,
        ]
    }

    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let (i, o, q) = (self.fan_in(), self.fan_out(), self.q());
        [vec![i, o], vec![o], vec![i, o], vec![o], vec![o, q], vec![o, q]]
    }

    /// Hyper-embeddings `(E_w z, E_b z)`.
    pub fn embeddings(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.q() {
            return Err(Error::Shape(format!(
                "hyperparameter vector has {} entries, layer expects {}",
                z.len(),
                self.q()
            )));
        }
        let project = |e: &Matrix| -> Vec<f64> {
            (0..e.rows)
                .map(|j| e.row(j).iter().zip(z).map(|(a, b)| a * b).sum())
                .collect()
        };
        Ok((project(&self.e_w), project(&self.e_b)))
    }

    /// Effective `(Ŵ, b̂)` for standardized hyperparameters `z`.
    pub fn effective(&self, z: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        let (c_w, c_b) = self.embeddings(z)?;
        Ok(self.effective_from(&c_w, &c_b))
    }

    pub(crate) fn effective_from(&self, c_w: &[f64], c_b: &[f64]) -> (Matrix, Vec<f64>) {
        let mut w = self.w.clone();
        let cols = w.cols;
        for (row, hyp) in w.data.chunks_mut(cols.max(1)).zip(self.w_hyper.data.chunks(cols.max(1))) {
            for ((x, h), c) in row.iter_mut().zip(hyp).zip(c_w) {
                *x += h * c;
            }
        }
        let b = self
            .b
            .iter()
            .zip(&self.b_hyper)
            .zip(c_b)
            .map(|((b, h), c)| b + h * c)
            .collect();
        (w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_layer(seed: u64) -> SelfTuningLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = SelfTuningLayer::init(3, 2, 4, &mut rng);
        for t in l.tensors_mut() {
            for v in t.iter_mut() {
                *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            }
        }
        l
    }

    #[test]
    fn zero_embedding_is_identity() {
        let mut l = random_layer(1);
        l.e_w = Matrix::zeros(2, 4);
        l.e_b = Matrix::zeros(2, 4);
        let (w, b) = l.effective(&[0.3, -2.0, 1.0, 5.0]).unwrap();
        assert_eq!(w, l.w);
        assert_eq!(b, l.b);
    }

    #[test]
    fn column_rescale_by_embedding() {
        let mut l = SelfTuningLayer::zeros(1, 2, 1);
        l.w_hyper = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        l.e_w = Matrix::from_vec(2, 1, vec![2.0, 3.0]);
        let (w, _) = l.effective(&[1.0]).unwrap();
        assert_eq!(w.data, vec![2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let l = random_layer(2);
        assert!(matches!(l.effective(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn fresh_layer_has_zero_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = SelfTuningLayer::init(5, 4, 3, &mut rng);
        assert!(l.e_w.data.iter().chain(&l.e_b.data).chain(&l.b).all(|&v| v == 0.0));
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(l.w.data.iter().all(|v| v.abs() < limit));
        assert!(l.w_hyper.data.iter().all(|v| v.abs() < 0.1 * limit));
    }

    proptest! {
        #[test]
        fn effective_params_are_affine(seed in 0u64..1000, alpha in -2.0f64..2.0,
                                       z1 in proptest::collection::vec(-3.0f64..3.0, 4),
                                       z2 in proptest::collection::vec(-3.0f64..3.0, 4)) {
            let l = random_layer(seed);
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let (wm, bm) = l.effective(&mix).unwrap();
            let (w1, b1) = l.effective(&z1).unwrap();
            let (w2, b2) = l.effective(&z2).unwrap();
            for k in 0..wm.data.len() {
                let expect = alpha * w1.data[k] + (1.0 - alpha) * w2.data[k];
                prop_assert!((wm.data[k] - expect).abs() < 1e-9);
            }
            for k in 0..bm.len() {
                prop_assert!((bm[k] - (alpha * b1[k] + (1.0 - alpha) * b2[k])).abs() < 1e-9);
            }
            // scaling: Ŵ(2z) - W = 2 (Ŵ(z) - W)
            let twice: Vec<f64> = z1.iter().map(|v| 2.0 * v).collect();
            let (wt, _) = l.effective(&twice).unwrap();
            for k in 0..wt.data.len() {
                prop_assert!(((wt.data[k] - l.w.data[k]) - 2.0 * (w1.data[k] - l.w.data[k])).abs() < 1e-9);
            }
        }
    }
}
