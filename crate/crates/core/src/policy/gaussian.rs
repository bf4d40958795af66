//! Diagonal Gaussian action distribution.

use rand::Rng;
use rand_distr::StandardNormal;

/// `0.5 * ln(2 pi)`
pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

pub fn log_prob(action: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mu)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) * (-ls).exp();
            -ls - HALF_LOG_2PI - 0.5 * z * z
        })
        .sum()
}

/// Sample `a = mu + exp(log_std) * z` with `z ~ N(0, I)`.
pub fn sample_action<R: Rng>(mu: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = mu
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let z: f64 = rng.sample(StandardNormal);
            m + ls.exp() * z
        })
        .collect();
    let lp = log_prob(&action, mu, log_std);
    (action, lp)
}

/// Differential entropy, `sum_j (log_std_j + 0.5 ln(2 pi e))`.
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + HALF_LOG_2PI + 0.5).sum()
}
