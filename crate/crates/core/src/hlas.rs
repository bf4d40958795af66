//! High-level action space.
//!
//! A raw policy action in `[-1, 1]^(1 + channels * (p + 1))` is decoded into
//! a duration `tau` and `p + 1` node values per channel. Nodes sit at evenly
//! spaced normalized times `t' = i / p` (both segment ends included) and are
//! interpolated by a degree-`p` polynomial in `t' in [0, 1]`:
//!
//! ```text
//! z(t') = c_1 + c_2 t' + ... + c_{p+1} t'^p
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlasConfig {
    /// Polynomial degree of each sub-trajectory.
    pub p: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Lower node bound per channel, physical units.
    pub z_min: Vec<f64>,
    /// Upper node bound per channel, physical units.
    pub z_max: Vec<f64>,
    /// Overwrite the first node of each segment with the final value of the
    /// previous one.
    pub continuity: bool,
}

impl HlasConfig {
    pub fn n_channels(&self) -> usize {
        self.z_min.len()
    }

    pub fn nodes_per_channel(&self) -> usize {
        self.p + 1
    }

    pub fn action_dim(&self) -> usize {
        1 + self.n_channels() * self.nodes_per_channel()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min.is_finite() && self.tau_max.is_finite()) || self.tau_min > self.tau_max {
            return Err(Error::config("hlas.tau_min", "need finite tau_min <= tau_max"));
        }
        if self.tau_min <= 0.0 {
            return Err(Error::config("hlas.tau_min", "must be positive"));
        }
        if self.z_min.is_empty() || self.z_min.len() != self.z_max.len() {
            return Err(Error::config(
                "hlas.z_min",
                "z_min and z_max must be non-empty and equally long",
            ));
        }
        for (c, (lo, hi)) in self.z_min.iter().zip(&self.z_max).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(
                    format!("hlas.z_min[{c}]"),
                    "channel bounds must be finite with z_min < z_max",
                ));
            }
        }
        Ok(())
    }
}

/// Duration and physical node values of one sub-trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAction {
    pub tau: f64,
    /// `nodes[channel][i]`
    pub nodes: Vec<Vec<f64>>,
}

/// Monomial coefficients over normalized time, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPoly {
    pub tau: f64,
    /// `coeffs[channel][k]` multiplies `t'^k`.
    pub coeffs: Vec<Vec<f64>>,
}

fn affine(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (raw.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
}

pub fn decode_action(raw: &[f64], cfg: &HlasConfig) -> Result<DecodedAction> {
    if raw.len() != cfg.action_dim() {
        return Err(Error::Shape(format!(
            "action has {} components, expected {}",
            raw.len(),
            cfg.action_dim()
        )));
    }
    let tau = affine(raw[0], cfg.tau_min, cfg.tau_max);
    let per = cfg.nodes_per_channel();
    let nodes = (0..cfg.n_channels())
        .map(|c| {
            raw[1 + c * per..1 + (c + 1) * per]
                .iter()
                .map(|&r| affine(r, cfg.z_min[c], cfg.z_max[c]))
                .collect()
        })
        .collect();
    Ok(DecodedAction { tau, nodes })
}

/// Normalized node abscissae `i / p`; a single node at zero when `p == 0`.
pub fn node_abscissae(p: usize) -> Vec<f64> {
    if p == 0 {
        vec![0.0]
    } else {
        (0..=p).map(|i| i as f64 / p as f64).collect()
    }
}

/// Solve a small dense system in place by Gaussian elimination with partial
/// pivoting. `a` is row-major `n x n`.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    x
}

/// Interpolating polynomial through `(t'_i, n_i)` via the Vandermonde system.
pub fn interpolate(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let ts = node_abscissae(n - 1);
    let mut v = vec![0.0; n * n];
    for (i, &t) in ts.iter().enumerate() {
        let mut pow = 1.0;
        for k in 0..n {
            v[i * n + k] = pow;
            pow *= t;
        }
    }
    solve_dense(v, nodes.to_vec())
}

pub fn fit_segment(action: &DecodedAction, cfg: &HlasConfig) -> Result<SegmentPoly> {
    let per = cfg.nodes_per_channel();
    if action.nodes.len() != cfg.n_channels() || action.nodes.iter().any(|n| n.len() != per) {
        return Err(Error::Shape(format!(
            "expected {} channels of {} nodes",
            cfg.n_channels(),
            per
        )));
    }
    Ok(SegmentPoly {
        tau: action.tau,
        coeffs: action.nodes.iter().map(|n| interpolate(n)).collect(),
    })
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn check_time(seg: &SegmentPoly, t: f64) -> Result<()> {
    if !(0.0..=seg.tau).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside segment [0, {}]",
            seg.tau
        )));
    }
    Ok(())
}

/// Channel values at physical time `t` from the segment start.
pub fn eval_segment(seg: &SegmentPoly, t: f64) -> Result<Vec<f64>> {
    check_time(seg, t)?;
    let x = t / seg.tau;
    Ok(seg.coeffs.iter().map(|c| horner(c, x)).collect())
}

/// Integral of the profile in physical time, added to `y_prev`:
/// `y(t) = y_prev + tau * sum_k c_{k+1} / (k+1) * (t/tau)^(k+1)`.
pub fn integrate_segment(seg: &SegmentPoly, y_prev: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(seg, t)?;
    if y_prev.len() != seg.coeffs.len() {
        return Err(Error::Shape(format!(
            "y_prev has {} channels, segment has {}",
            y_prev.len(),
            seg.coeffs.len()
        )));
    }
    let x = t / seg.tau;
    Ok(seg
        .coeffs
        .iter()
        .zip(y_prev)
        .map(|(c, &y0)| {
            let antideriv: Vec<f64> = std::iter::once(0.0)
                .chain(c.iter().enumerate().map(|(k, &ck)| ck / (k + 1) as f64))
                .collect();
            y0 + seg.tau * horner(&antideriv, x)
        })
        .collect())
}

/// How the per-segment approximation `z*` of the reference derivative is
/// built in [`lemma_error_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    /// Constant at the midpoint of the segment's range, `(U + L) / 2`.
    /// Requires `p == 0`.
    MidpointRange,
    /// Least-squares degree-`p` polynomial over the segment's samples.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    /// Uniform bound on `|z* - f*|` used in the inequality.
    pub m1: f64,
    /// Largest observed `|z* - f*|` over all samples.
    pub max_fit_error: f64,
    pub max_integrated_error: f64,
    /// Largest `|x_hat(t) - x*(t)| - m1 (t - t0)`; non-positive when the
    /// bound holds.
    pub worst_slack: f64,
    pub bound_satisfied: bool,
}

/// Check the linear-growth bound `|x_hat(t) - x*(t)| <= m1 (t - t0)` for a
/// piecewise polynomial approximation of a densely sampled derivative.
///
/// Segment `h` covers the closed interval `[t_{h-1}, t_h]` with
/// `t_h = t0 + sum(durations[..=h])`. Both integrals use the trapezoid rule on
/// the sample grid, evaluating `z*` from the segment that contains each
/// sample interval.
pub fn lemma_error_oracle(
    times: &[f64],
    f_star: &[f64],
    durations: &[f64],
    p: usize,
    construction: Construction,
) -> Result<LemmaReport> {
    if durations.is_empty() {
        return Err(Error::InvalidArgument("empty partition".into()));
    }
    if times.len() != f_star.len() || times.len() < 2 {
        return Err(Error::Shape("need at least two matching samples".into()));
    }
    if construction == Construction::MidpointRange && p != 0 {
        return Err(Error::InvalidArgument(
            "midpoint-of-range construction is degree zero".into(),
        ));
    }
    let t0 = times[0];
    let mut bounds = Vec::with_capacity(durations.len() + 1);
    bounds.push(t0);
    for d in durations {
        bounds.push(bounds.last().unwrap() + d);
    }
    let end = *times.last().unwrap();
    let span = (end - t0).abs().max(1.0);
    if *bounds.last().unwrap() < end - 1e-9 * span {
        return Err(Error::InvalidArgument(
            "partition does not cover the sample range".into(),
        ));
    }
    let slack_tol = 1e-12 * span;

    // Per segment: indices of samples in the closed interval and the fitted
    // polynomial over normalized time.
    let mut segments: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(durations.len());
    let mut m1: f64 = 0.0;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let idx: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] >= a - slack_tol && times[i] <= b + slack_tol)
            .collect();
        if idx.is_empty() {
            segments.push((a, b, vec![0.0]));
            continue;
        }
        let coeffs = match construction {
            Construction::MidpointRange => {
                let lo = idx.iter().map(|&i| f_star[i]).fold(f64::INFINITY, f64::min);
                let hi = idx
                    .iter()
                    .map(|&i| f_star[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                m1 = m1.max((hi - lo) / 2.0);
                vec![(hi + lo) / 2.0]
            }
            Construction::LeastSquares => {
                least_squares(&idx, times, f_star, a, b - a, p)
            }
        };
        if construction == Construction::LeastSquares {
            for &i in &idx {
                let z = horner(&coeffs, (times[i] - a) / (b - a));
                m1 = m1.max((z - f_star[i]).abs());
            }
        }
        segments.push((a, b, coeffs));
    }

    let z_on = |seg: &(f64, f64, Vec<f64>), t: f64| horner(&seg.2, (t - seg.0) / (seg.1 - seg.0));
    let mut max_fit_error: f64 = 0.0;
    let mut x_hat = 0.0;
    let mut x_star = 0.0;
    let mut max_integrated_error: f64 = 0.0;
    let mut worst_slack = f64::NEG_INFINITY;
    let mut seg_idx = 0;
    for i in 0..times.len() - 1 {
        let (ta, tb) = (times[i], times[i + 1]);
        let mid = 0.5 * (ta + tb);
        while seg_idx + 1 < segments.len() && mid > segments[seg_idx].1 {
            seg_idx += 1;
        }
        let seg = &segments[seg_idx];
        let (za, zb) = (z_on(seg, ta), z_on(seg, tb));
        max_fit_error = max_fit_error
            .max((za - f_star[i]).abs())
            .max((zb - f_star[i + 1]).abs());
        x_hat += 0.5 * (tb - ta) * (za + zb);
        x_star += 0.5 * (tb - ta) * (f_star[i] + f_star[i + 1]);
        let err = (x_hat - x_star).abs();
        max_integrated_error = max_integrated_error.max(err);
        worst_slack = worst_slack.max(err - m1 * (tb - t0));
    }
    Ok(LemmaReport {
        m1,
        max_fit_error,
        max_integrated_error,
        worst_slack,
        // Allowance for summation roundoff in the two running integrals.
        bound_satisfied: worst_slack <= 1e-12 * (1.0 + m1 * span),
    })
}

fn least_squares(idx: &[usize], times: &[f64], f: &[f64], a: f64, len: f64, p: usize) -> Vec<f64> {
    let n = (p + 1).min(idx.len());
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for &i in idx {
        let x = (times[i] - a) / len;
        let row: Vec<f64> = (0..n).map(|k| x.powi(k as i32)).collect();
        for r in 0..n {
            atb[r] += row[r] * f[i];
            for c in 0..n {
                ata[r * n + c] += row[r] * row[c];
            }
        }
    }
    solve_dense(ata, atb)
}
