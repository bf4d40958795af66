//! Clipped surrogate objective with value, entropy and anti-windup terms,
//! and its exact gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::policy::{backward, entropy, forward_batch, GradientBuffer, PolicyParams, HALF_LOG_2PI};

/// Mean over rows of `sum_j max(|mu_j| - (1 - eps), 0)^2`.
pub fn antiwindup_penalty(mu: ArrayView2<f64>, eps: f64) -> f64 {
    if mu.nrows() == 0 {
        return 0.0;
    }
    let edge = 1.0 - eps;
    mu.iter()
        .map(|m| (m.abs() - edge).max(0.0).powi(2))
        .sum::<f64>()
        / mu.nrows() as f64
}

/// Gradient of [`antiwindup_penalty`] with respect to every `mu` entry.
pub fn antiwindup_gradient(mu: ArrayView2<f64>, eps: f64) -> Array2<f64> {
    let edge = 1.0 - eps;
    let n = mu.nrows().max(1) as f64;
    mu.mapv(|m| 2.0 * (m.abs() - edge).max(0.0) * m.signum() / n)
}

/// Multiplicative coefficient update toward the target penalty level.
pub fn adapt_penalty_coefficient(c3: f64, d: f64, d_tar: f64) -> f64 {
    if d < d_tar / 1.5 {
        c3 / 2.0
    } else if d > d_tar * 1.5 {
        c3 * 2.0
    } else {
        c3
    }
}

/// Weights of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    /// Anti-windup weight; ignored when `antiwindup` is false.
    pub c3: f64,
    pub antiwindup: bool,
    pub antiwindup_eps: f64,
}

/// Training data for one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct MiniBatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub old_log_probs: ArrayView1<'a, f64>,
    pub advantages: ArrayView1<'a, f64>,
    pub returns: ArrayView1<'a, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutput {
    /// The maximized objective.
    pub objective: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub d: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Evaluate the objective and the gradient of its negation (the quantity an
/// optimizer minimizes).
pub fn ppo_loss(
    params: &PolicyParams,
    mb: &MiniBatch,
    coefs: &LossCoefs,
) -> Result<(LossOutput, GradientBuffer)> {
    let n = mb.obs.nrows();
    let ad = params.arch.action_dim;
    if n == 0
        || mb.actions.dim() != (n, ad)
        || mb.old_log_probs.len() != n
        || mb.advantages.len() != n
        || mb.returns.len() != n
    {
        return Err(Error::Shape(format!(
            "minibatch of {n} rows with action dim {ad} is inconsistent"
        )));
    }
    let cache = forward_batch(params, mb.obs)?;
    let log_std = &params.weights.log_std;
    let inv_var = log_std.mapv(|ls| (-2.0 * ls).exp());
    let nf = n as f64;
    let (lo, hi) = (1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps);

    let diff = &mb.actions - &cache.mu;
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    let mut approx_kl = 0.0;
    // d(surrogate_i)/d(log pi_i)
    let mut g = Array1::<f64>::zeros(n);
    for i in 0..n {
        let z2: f64 = diff.row(i).iter().zip(&inv_var).map(|(d, iv)| d * d * iv).sum();
        let lp = -log_std.sum() - HALF_LOG_2PI * ad as f64 - 0.5 * z2;
        let log_ratio = lp - mb.old_log_probs[i];
        let r = log_ratio.exp();
        let a = mb.advantages[i];
        let unclipped = r * a;
        let clipped_term = r.clamp(lo, hi) * a;
        surrogate += unclipped.min(clipped_term);
        if (r - 1.0).abs() > coefs.clip_eps {
            clipped += 1;
        }
        approx_kl += (r - 1.0) - log_ratio;
        let inside = (lo..=hi).contains(&r);
        g[i] = if unclipped <= clipped_term || inside {
            unclipped
        } else {
            0.0
        };
    }
    surrogate /= nf;
    approx_kl /= nf;

    let v_err = &cache.value - &mb.returns;
    let value_loss = v_err.mapv(|e| e * e).sum() / nf;
    let ent = entropy(log_std.as_slice().unwrap());
    let d = antiwindup_penalty(cache.mu.view(), coefs.antiwindup_eps);
    let c3 = if coefs.antiwindup { coefs.c3 } else { 0.0 };
    let objective = surrogate - coefs.vf_coef * value_loss + coefs.ent_coef * ent - c3 * d;
    if !objective.is_finite() {
        return Err(Error::non_finite(format!(
            "ppo objective (surrogate {surrogate}, value loss {value_loss}, d {d})"
        )));
    }

    // Adjoints of the minimized loss -objective.
    let g_col = g.view().insert_axis(Axis(1));
    let mut d_mu = -(&diff * &inv_var) * g_col / nf;
    if c3 != 0.0 {
        d_mu = d_mu + antiwindup_gradient(cache.mu.view(), coefs.antiwindup_eps) * c3;
    }
    let z2_cols = (&diff * &diff) * &inv_var - 1.0;
    let d_log_std = -(z2_cols * g_col).sum_axis(Axis(0)) / nf - coefs.ent_coef;
    let d_value = v_err * (2.0 * coefs.vf_coef / nf);
    let grads = backward(params, &cache, d_mu.view(), d_log_std.view(), d_value.view())?;

    Ok((
        LossOutput {
            objective,
            surrogate,
            value_loss,
            entropy: ent,
            d,
            clip_fraction: clipped as f64 / nf,
            approx_kl,
        },
        grads,
    ))
}
