//! Relaxed Bernoulli ("concrete") dropout, differentiable in the rate.
//!
//! With uniform noise `ζ`, drop rate `p` and temperature `t`:
//!
//! ```text
//! d    = sigmoid((logit(p) + logit(ζ)) / t)
//! keep = (1 - d) / (1 - p)
//! ```

use rand::Rng;

use crate::hyper::sigmoid;

pub const TEMPERATURE: f64 = 0.5;
const NOISE_EPS: f64 = 1e-7;

pub fn draw_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.gen::<f64>().clamp(NOISE_EPS, 1.0 - NOISE_EPS))
        .collect()
}

/// Keep multiplier and its derivative with respect to `p`.
pub fn keep(p: f64, noise: f64) -> (f64, f64) {
    if p == 0.0 {
        return (1.0, 1.0);
    }
    let t = TEMPERATURE;
    let s = ((p / (1.0 - p)).ln() + (noise / (1.0 - noise)).ln()) / t;
    let d = sigmoid(s);
    let inv = 1.0 / (1.0 - p);
    let dd_dp = d * (1.0 - d) / t * (1.0 / p + inv);
    let m = (1.0 - d) * inv;
    let dm = -dd_dp * inv + (1.0 - d) * inv * inv;
    (m, dm)
}
