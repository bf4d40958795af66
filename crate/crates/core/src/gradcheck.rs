//! Finite-difference checks of the analytic gradients: the bare network,
//! the full PPO objective with the anti-windup term straddling its
//! activation edge, and the smoothness of the penalty at that edge.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::policy::{
    backward, forward_batch, log_prob, preactivation_margin, Activation, GradientBuffer, NetArch,
    PolicyParams, Weights,
};
use crate::trainer::{antiwindup_gradient, antiwindup_penalty, ppo_loss, LossCoefs, MiniBatch};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-3;
/// Instances are redrawn until every ReLU input, penalty argument and clip
/// ratio sits at least this far from its kink.
const KINK_MARGIN: f64 = 1e-3;
const RATIO_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 1000;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter block holding the worst entry, if the check has blocks.
    pub worst_block: Option<String>,
    pub evaluations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Blocks named by failing checks.
    pub fn failing_blocks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .filter_map(|c| c.worst_block.as_deref())
            .collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "{:<22} {} max_rel_err={:.3e} n={}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.max_rel_error,
                c.evaluations
            )?;
            if let Some(b) = &c.worst_block {
                write!(f, " worst_block={b}")?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "gradcheck seed={} tolerance={:e}: {}",
            self.seed,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Optional corruption of one analytic gradient block, for exercising the
/// failure path.
#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    pub block: Option<String>,
}

fn small_arch(action_dim: usize) -> NetArch {
    NetArch {
        input_dim: 3,
        shared_layers: vec![6, 5],
        head_hidden: 4,
        action_dim,
        activation: Activation::Relu,
    }
}

fn random_params(rng: &mut ChaCha8Rng, action_dim: usize) -> Result<PolicyParams> {
    let mut p = PolicyParams::init(small_arch(action_dim), vec![1.0; 3], -0.3, rng)?;
    for (_, block) in p.weights.blocks_mut() {
        for x in block.iter_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    Ok(p)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

fn corrupt(grads: &mut Weights, fault: &FaultInjection) {
    if let Some(name) = &fault.block {
        for (n, b) in grads.blocks_mut() {
            if &n == name {
                b.iter_mut().for_each(|x| *x += 1.0);
            }
        }
    }
}

/// Compare `analytic` against central differences of `f` over every
/// parameter.
fn compare_blocks(
    name: &str,
    params: &PolicyParams,
    analytic: &Weights,
    f: impl Fn(&PolicyParams) -> Result<f64>,
) -> Result<CheckResult> {
    let mut worst = (0.0f64, None);
    let mut evaluations = 0;
    let analytic_blocks: Vec<(String, Vec<f64>)> = analytic
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();
    let mut probe = params.clone();
    for (bi, (block_name, a_vals)) in analytic_blocks.iter().enumerate() {
        for (k, a) in a_vals.iter().enumerate() {
            let orig = probe.weights.blocks()[bi].1[k];
            probe.weights.blocks_mut()[bi].1[k] = orig + FD_STEP;
            let up = f(&probe)?;
            probe.weights.blocks_mut()[bi].1[k] = orig - FD_STEP;
            let down = f(&probe)?;
            probe.weights.blocks_mut()[bi].1[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(*a, numeric);
            evaluations += 1;
            if err > worst.0 || worst.1.is_none() {
                worst = (err, Some(block_name.clone()));
            }
        }
    }
    Ok(CheckResult {
        name: name.into(),
        max_rel_error: worst.0,
        worst_block: worst.1,
        evaluations,
        passed: worst.0 < TOLERANCE,
    })
}

/// Network gradients for a random linear functional of the outputs.
pub fn check_network(seed: u64, fault: &FaultInjection) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let (params, obs) = loop {
        let p = random_params(&mut rng, 2)?;
        let obs = random_matrix(&mut rng, n, 3, -1.5, 1.5);
        if preactivation_margin(&p, obs.view()) > KINK_MARGIN {
            break (p, obs);
        }
    };
    let w_mu = random_matrix(&mut rng, n, 2, -1.0, 1.0);
    let w_ls = Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0));
    let w_v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let functional = |p: &PolicyParams| -> Result<f64> {
        let c = forward_batch(p, obs.view())?;
        Ok((&c.mu * &w_mu).sum() + (&p.weights.log_std * &w_ls).sum() + (&c.value * &w_v).sum())
    };
    let cache = forward_batch(&params, obs.view())?;
    let GradientBuffer(mut g) = backward(&params, &cache, w_mu.view(), w_ls.view(), w_v.view())?;
    corrupt(&mut g, fault);
    compare_blocks("network", &params, &g, functional)
}

/// A random PPO minibatch whose action means straddle `|mu| = 1 - eps` and
/// whose probability ratios avoid the clip edges.
struct LossInstance {
    params: PolicyParams,
    obs: Array2<f64>,
    actions: Array2<f64>,
    old_lp: Array1<f64>,
    adv: Array1<f64>,
    ret: Array1<f64>,
}

impl LossInstance {
    fn batch(&self) -> MiniBatch<'_> {
        MiniBatch {
            obs: self.obs.view(),
            actions: self.actions.view(),
            old_log_probs: self.old_lp.view(),
            advantages: self.adv.view(),
            returns: self.ret.view(),
        }
    }
}

fn loss_instance(rng: &mut ChaCha8Rng, coefs: &LossCoefs) -> Result<LossInstance> {
    let n = 9;
    let ad = 2;
    for _ in 0..MAX_DRAWS {
        let mut params = random_params(rng, ad)?;
        params.weights.policy_out.b[0] = 0.95;
        params.weights.policy_out.b[1] = -0.85;
        let obs = random_matrix(rng, n, 3, -1.5, 1.5);
        if preactivation_margin(&params, obs.view()) <= KINK_MARGIN {
            continue;
        }
        let cache = forward_batch(&params, obs.view())?;
        let edge = 1.0 - coefs.antiwindup_eps;
        let active = cache.mu.iter().filter(|m| m.abs() > edge).count();
        let inactive = cache.mu.len() - active;
        let near_edge = cache.mu.iter().any(|m| (m.abs() - edge).abs() < KINK_MARGIN);
        if active == 0 || inactive == 0 || near_edge {
            continue;
        }
        let actions = &cache.mu + &random_matrix(rng, n, ad, -1.0, 1.0);
        let ls = params.log_std().to_vec();
        let mut old_lp = Array1::zeros(n);
        let mut ok = true;
        for i in 0..n {
            let mu: Vec<f64> = cache.mu.row(i).to_vec();
            let a: Vec<f64> = actions.row(i).to_vec();
            let lp = log_prob(&a, &mu, &ls);
            old_lp[i] = lp + rng.random_range(-0.4..0.4);
            let r = (lp - old_lp[i]).exp();
            if (r - (1.0 - coefs.clip_eps)).abs() < RATIO_MARGIN
                || (r - (1.0 + coefs.clip_eps)).abs() < RATIO_MARGIN
            {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let adv = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let ret = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        return Ok(LossInstance {
            params,
            obs,
            actions,
            old_lp,
            adv,
            ret,
        });
    }
    Err(crate::Error::InvalidArgument(
        "no kink-free gradcheck instance found".into(),
    ))
}

/// Full objective gradient, anti-windup included.
pub fn check_ppo_loss(seed: u64, fault: &FaultInjection) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let coefs = LossCoefs {
        clip_eps: 0.2,
        vf_coef: 0.5,
        ent_coef: 0.01,
        c3: 2.0,
        antiwindup: true,
        antiwindup_eps: 0.1,
    };
    let inst = loss_instance(&mut rng, &coefs)?;
    let (_, GradientBuffer(mut g)) = ppo_loss(&inst.params, &inst.batch(), &coefs)?;
    corrupt(&mut g, fault);
    let mb = inst.batch();
    compare_blocks("ppo-loss", &inst.params, &g, |p| {
        Ok(-ppo_loss(p, &mb, &coefs)?.0.objective)
    })
}

/// The penalty's derivative is continuous across `|mu| = 1 - eps`, and the
/// closed-form gradient matches differences on both sides.
pub fn check_antiwindup_boundary(fault: &FaultInjection) -> CheckResult {
    let eps = 0.1;
    let edge = 1.0 - eps;
    let bump = if fault.block.as_deref() == Some("antiwindup") {
        1.0
    } else {
        0.0
    };
    let penalty = |m: f64| antiwindup_penalty(Array2::from_elem((1, 1), m).view(), eps);
    let fd_with = |m: f64, h: f64| (penalty(m + h) - penalty(m - h)) / (2.0 * h);
    let fd = |m: f64| fd_with(m, FD_STEP);
    let mut worst = 0.0f64;
    let mut evaluations = 0;
    for sign in [1.0, -1.0] {
        for off in [-0.3, -1e-3, -2e-5, 2e-5, 1e-3, 0.05, 0.3] {
            let m = sign * (edge + off);
            let analytic =
                antiwindup_gradient(Array2::from_elem((1, 1), m).view(), eps)[[0, 0]] + bump;
            worst = worst.max(relative_error(analytic, fd(m)));
            evaluations += 1;
        }
        // One-sided slopes just past the edge, with a step small enough
        // to stay on each side.
        let h = 1e-8;
        let jump = (fd_with(sign * (edge + 2.0 * h), h) - fd_with(sign * (edge - 2.0 * h), h)).abs();
        worst = worst.max(jump);
        evaluations += 1;
    }
    CheckResult {
        name: "antiwindup-boundary".into(),
        max_rel_error: worst,
        worst_block: (worst >= TOLERANCE).then(|| "antiwindup".to_string()),
        evaluations,
        passed: worst < TOLERANCE,
    }
}

pub fn run_gradcheck(seed: u64, fault: &FaultInjection) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        seed,
        tolerance: TOLERANCE,
        checks: vec![
            check_network(seed, fault)?,
            check_ppo_loss(seed, fault)?,
            check_antiwindup_boundary(fault),
        ],
    })
}
