//! Hyperparameter spaces and the sampling distribution over them.
//!
//! Every hyperparameter lives in an unconstrained coordinate `u` and is
//! mapped to its constrained value by a smooth monotone transform:
//! rates use `0.9 · sigmoid(u)`, weight decay uses `exp(u)` clamped to its
//! range. The distribution is a box `[μ - σ, μ + σ]` in `u` space, which is
//! log-uniform for weight decay and logit-uniform for rates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RATE_MAX: f64 = 0.9;
pub const DECAY_MIN: f64 = 1e-6;
pub const DECAY_MAX: f64 = 1e-2;
pub const SIGMA_MIN: f64 = 0.01;
pub const SIGMA_MAX: f64 = 2.0;
/// Half-width of the unconstrained initialization box for rates.
pub const RATE_LOGIT_SPAN: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperKind {
    DropoutRate,
    EdgeDropRate,
    WeightDecay,
}

impl HyperKind {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            HyperKind::DropoutRate | HyperKind::EdgeDropRate => (0.0, RATE_MAX),
            HyperKind::WeightDecay => (DECAY_MIN, DECAY_MAX),
        }
    }

    /// Box in unconstrained space used for initialization, random search
    /// and hypernet input standardization.
    pub fn unconstrained_box(self) -> (f64, f64) {
        match self {
            HyperKind::DropoutRate | HyperKind::EdgeDropRate => (-RATE_LOGIT_SPAN, RATE_LOGIT_SPAN),
            HyperKind::WeightDecay => (DECAY_MIN.ln(), DECAY_MAX.ln()),
        }
    }

    pub fn constrain(self, u: f64) -> f64 {
        match self {
            HyperKind::DropoutRate | HyperKind::EdgeDropRate => RATE_MAX * sigmoid(u),
            HyperKind::WeightDecay => u.exp().clamp(DECAY_MIN, DECAY_MAX),
        }
    }

    /// `dλ/du`; zero where weight decay saturates its clamp.
    pub fn constrain_grad(self, u: f64) -> f64 {
        match self {
            HyperKind::DropoutRate | HyperKind::EdgeDropRate => {
                let s = sigmoid(u);
                RATE_MAX * s * (1.0 - s)
            }
            HyperKind::WeightDecay => {
                let v = u.exp();
                if (DECAY_MIN..=DECAY_MAX).contains(&v) {
                    v
                } else {
                    0.0
                }
            }
        }
    }

    pub fn unconstrain(self, lambda: f64) -> f64 {
        match self {
            HyperKind::DropoutRate | HyperKind::EdgeDropRate => {
                let p = lambda / RATE_MAX;
                (p / (1.0 - p)).ln()
            }
            HyperKind::WeightDecay => lambda.ln(),
        }
    }

    /// Hypernet input: `u` rescaled so the initialization box maps to [-1, 1].
    pub fn standardize(self, u: f64) -> f64 {
        let (lo, hi) = self.unconstrained_box();
        (u - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    }

    pub fn standardize_grad(self) -> f64 {
        let (lo, hi) = self.unconstrained_box();
        2.0 / (hi - lo)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperDim {
    pub name: String,
    pub kind: HyperKind,
}

/// Ordered hyperparameters of an L-layer model: one dropout rate per hidden
/// layer, then the edge-drop rate, then weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    pub dims: Vec<HyperDim>,
}

impl HyperSpace {
    pub fn for_layers(layers: usize) -> Self {
        let mut dims: Vec<HyperDim> = (0..layers.saturating_sub(1))
            .map(|l| HyperDim {
                name: format!("dropout_{l}"),
                kind: HyperKind::DropoutRate,
            })
            .collect();
        dims.push(HyperDim {
            name: "edge_drop".into(),
            kind: HyperKind::EdgeDropRate,
        });
        dims.push(HyperDim {
            name: "weight_decay".into(),
            kind: HyperKind::WeightDecay,
        });
        Self { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn num_dropout(&self) -> usize {
        self.dims.iter().filter(|d| d.kind == HyperKind::DropoutRate).count()
    }

    pub fn index_of(&self, kind: HyperKind) -> Option<usize> {
        self.dims.iter().position(|d| d.kind == kind)
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn constrain(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &x)| d.kind.constrain(x)).collect()
    }

    pub fn unconstrain(&self, lambda: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(lambda).map(|(d, &x)| d.kind.unconstrain(x)).collect()
    }

    pub fn vector(&self, u: Vec<f64>) -> HyperVector {
        let lambda = self.constrain(&u);
        let z = self.dims.iter().zip(&u).map(|(d, &x)| d.kind.standardize(x)).collect();
        HyperVector { u, lambda, z }
    }

    /// Point drawn uniformly in the unconstrained initialization box.
    pub fn uniform_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| {
                let (lo, hi) = d.kind.unconstrained_box();
                rng.gen_range(lo..hi)
            })
            .collect()
    }

    pub fn contains(&self, lambda: &[f64]) -> bool {
        lambda.len() == self.len()
            && self.dims.iter().zip(lambda).all(|(d, &x)| {
                let (lo, hi) = d.kind.bounds();
                x >= lo && x <= hi
            })
    }
}

/// One hyperparameter setting: unconstrained `u`, its constrained image
/// `lambda`, and the standardized hypernet input `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperVector {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
}

impl HyperVector {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn dropout(&self, layer: usize) -> f64 {
        self.lambda[layer]
    }

    pub fn edge_drop(&self) -> f64 {
        self.lambda[self.lambda.len() - 2]
    }

    pub fn weight_decay(&self) -> f64 {
        self.lambda[self.lambda.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for SigmaBounds {
    fn default() -> Self {
        Self {
            min: SIGMA_MIN,
            max: SIGMA_MAX,
        }
    }
}

/// `P(λ | μ, σ)`: uniform over `[μ - σ, μ + σ]` per unconstrained coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub bounds: SigmaBounds,
}

impl HyperDistribution {
    pub fn new(mu: Vec<f64>, sigma: f64, bounds: SigmaBounds) -> Self {
        let s = sigma.clamp(bounds.min, bounds.max);
        let sigma = vec![s; mu.len()];
        Self { mu, sigma, bounds }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn clamp_sigma(&mut self) {
        let b = self.bounds;
        for s in &mut self.sigma {
            *s = s.clamp(b.min, b.max);
        }
    }

    /// Deterministic center `λ = constrain(μ)`.
    pub fn center(&self, space: &HyperSpace) -> HyperVector {
        space.vector(self.mu.clone())
    }

    /// Reparameterized draw: `u = μ + σ ⊙ u₀`, `u₀ ~ U[-1, 1]^q`.
    pub fn sample(&self, space: &HyperSpace, seed: u64) -> (HyperVector, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..self.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        (self.sample_with(space, &noise), noise)
    }

    pub fn sample_with(&self, space: &HyperSpace, noise: &[f64]) -> HyperVector {
        let u = self
            .mu
            .iter()
            .zip(&self.sigma)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect();
        space.vector(u)
    }

    /// Differential entropy `Σ ln(2σ_i)` of the box.
    pub fn entropy(&self) -> Result<f64> {
        if let Some(&s) = self.sigma.iter().find(|&&s| s <= 0.0 || s.is_nan()) {
            return Err(Error::OutOfRange {
                name: "sigma",
                value: s,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(self.sigma.iter().map(|s| (2.0 * s).ln()).sum())
    }

    /// `∂H/∂σ_i = 1/σ_i`.
    pub fn entropy_grad(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 1.0 / s).collect()
    }

    /// Exploration: shift each center by up to one half-width, rescale each
    /// half-width by a factor drawn from `factors`, then clamp.
    pub fn perturb(&self, factors: &[f64], seed: u64) -> HyperDistribution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for i in 0..out.len() {
            out.mu[i] += self.sigma[i] * rng.gen_range(-1.0..=1.0);
            let f = factors.choose(&mut rng).copied().unwrap_or(1.0);
            out.sigma[i] *= f;
        }
        out.clamp_sigma();
        out
    }

    /// Human-readable dump: `name=value (μ, σ)` per dimension.
    pub fn describe(&self, space: &HyperSpace) -> String {
        let lambda = space.constrain(&self.mu);
        space
            .dims
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{}={:.4e} (mu={:.4}, sigma={:.4})", d.name, lambda[i], self.mu[i], self.sigma[i]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub const PERTURB_FACTORS: [f64; 2] = [0.8, 1.2];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constrain_examples() {
        assert_eq!(HyperKind::DropoutRate.constrain(0.0), 0.45);
        let wd = HyperKind::WeightDecay.constrain(1e-4f64.ln());
        assert!((wd - 1e-4).abs() < 1e-18);
        assert!(HyperKind::EdgeDropRate.constrain(-800.0) < 1e-300);
        assert_eq!(HyperSpace::for_layers(4).len(), 5);
        assert_eq!(HyperSpace::for_layers(8).len(), 9);
    }

    #[test]
    fn degenerate_width_samples_center() {
        let space = HyperSpace::for_layers(3);
        let bounds = SigmaBounds { min: 0.0, max: 0.0 };
        let d = HyperDistribution::new(vec![0.3, -1.0, 0.5, -9.0], 0.0, bounds);
        let (v, _) = d.sample(&space, 5);
        assert_eq!(v.u, d.mu);
    }

    #[test]
    fn sample_mean_concentrates() {
        let space = HyperSpace::for_layers(2);
        let d = HyperDistribution::new(vec![0.5, -0.25, -9.0], 1.0, SigmaBounds::default());
        let n = 10_000;
        let mut mean = [0.0; 3];
        for s in 0..n {
            let (v, _) = d.sample(&space, s);
            for (m, u) in mean.iter_mut().zip(&v.u) {
                *m += u / n as f64;
            }
        }
        // sd of U[-1,1] is 1/sqrt(3)
        let tol = 3.0 * (1.0 / 3f64.sqrt()) / (n as f64).sqrt();
        for (m, mu) in mean.iter().zip(&d.mu) {
            assert!((m - mu).abs() < tol, "{m} vs {mu}");
        }
        assert_eq!(d.sample(&space, 42), d.sample(&space, 42));
    }

    #[test]
    fn entropy_examples() {
        let b = SigmaBounds::default();
        let one = HyperDistribution::new(vec![0.0], 0.5, b);
        assert_eq!(one.entropy().unwrap(), 0.0);
        let two = HyperDistribution::new(vec![0.0, 0.0], 1.0, b);
        assert!((two.entropy().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let mut doubled = two.clone();
        doubled.sigma.iter_mut().for_each(|s| *s *= 2.0);
        assert!((doubled.entropy().unwrap() - two.entropy().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let mut bad = two;
        bad.sigma[1] = 0.0;
        assert!(bad.entropy().is_err());
    }

    #[test]
    fn perturb_collapsed_clamp_only_shifts_mu() {
        let b = SigmaBounds { min: 0.7, max: 0.7 };
        let d = HyperDistribution::new(vec![0.0, 1.0, -5.0], 0.7, b);
        let p = d.perturb(&PERTURB_FACTORS, 3);
        assert_eq!(p.sigma, d.sigma);
        assert_ne!(p.mu, d.mu);
        for (a, b) in p.mu.iter().zip(&d.mu) {
            assert!((a - b).abs() <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn perturb_factor_applies_before_clamp() {
        let d = HyperDistribution::new(vec![0.0], 1.0, SigmaBounds::default());
        let seen: Vec<f64> = (0..32).map(|s| d.perturb(&[1.2], s).sigma[0]).collect();
        assert!(seen.iter().all(|&s| (s - 1.2).abs() < 1e-15));
    }

    #[test]
    fn repeated_perturbation_respects_floor() {
        let mut d = HyperDistribution::new(vec![0.0; 4], 0.02, SigmaBounds::default());
        for s in 0..1000 {
            d = d.perturb(&[0.8], s);
            assert!(d.sigma.iter().all(|&x| x >= SIGMA_MIN));
        }
        assert!(d.entropy().unwrap() >= 4.0 * (2.0 * SIGMA_MIN).ln());
    }

    #[test]
    fn reparameterized_gradients_match_differences() {
        let space = HyperSpace::for_layers(3);
        let d = HyperDistribution::new(vec![0.4, -1.2, 0.3, -8.0], 0.6, SigmaBounds::default());
        let noise = vec![0.3, -0.7, 0.9, 0.1];
        let h = 1e-6;
        for i in 0..d.len() {
            let kind = space.dims[i].kind;
            let u = d.mu[i] + d.sigma[i] * noise[i];
            let analytic_mu = kind.constrain_grad(u);
            let analytic_sigma = kind.constrain_grad(u) * noise[i];
            let eval = |dm: f64, ds: f64| {
                let mut e = d.clone();
                e.mu[i] += dm;
                e.sigma[i] += ds;
                e.sample_with(&space, &noise).lambda[i]
            };
            let fd_mu = (eval(h, 0.0) - eval(-h, 0.0)) / (2.0 * h);
            let fd_sigma = (eval(0.0, h) - eval(0.0, -h)) / (2.0 * h);
            assert!((fd_mu - analytic_mu).abs() <= 1e-5 * analytic_mu.abs());
            assert!((fd_sigma - analytic_sigma).abs() <= 1e-5 * analytic_sigma.abs());
        }
    }

    proptest! {
        #[test]
        fn constrain_stays_in_range_and_is_monotone(a in -40.0f64..40.0, b in -40.0f64..40.0) {
            for kind in [HyperKind::DropoutRate, HyperKind::EdgeDropRate, HyperKind::WeightDecay] {
                let (lo, hi) = kind.bounds();
                let (x, y) = (kind.constrain(a), kind.constrain(b));
                prop_assert!(x >= lo && x <= hi);
                if a < b { prop_assert!(x <= y); }
            }
        }

        #[test]
        fn unconstrain_round_trips(u in -8.0f64..8.0, w in -13.8f64..-4.61) {
            let r = HyperKind::DropoutRate;
            prop_assert!((r.unconstrain(r.constrain(u)) - u).abs() < 1e-9);
            let d = HyperKind::WeightDecay;
            prop_assert!((d.unconstrain(d.constrain(w)) - w).abs() < 1e-9);
        }

        #[test]
        fn entropy_increases_in_sigma(s in 0.01f64..2.0, ds in 1e-6f64..1.0) {
            let b = SigmaBounds { min: 0.0, max: 10.0 };
            let lo = HyperDistribution::new(vec![0.0, 0.0], s, b);
            let mut hi = lo.clone();
            hi.sigma[1] += ds;
            prop_assert!(hi.entropy().unwrap() > lo.entropy().unwrap());
        }
    }
}
