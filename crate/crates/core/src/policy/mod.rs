//! Actor-critic network: a shared ReLU trunk feeding a policy head (action
//! mean) and a value head, plus a state-independent log standard deviation.
//!
//! Weight matrices are stored `[fan_in, fan_out]`, row-major, so a batch of
//! inputs `X` (`[n, fan_in]`) maps to `X W + b`.

mod adam;
mod gaussian;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{entropy, log_prob, sample_action, HALF_LOG_2PI};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub input_dim: usize,
    pub shared_layers: Vec<usize>,
    /// Width of the private hidden layer in each head.
    pub head_hidden: usize,
    pub action_dim: usize,
    pub activation: Activation,
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_dim, self.head_hidden, self.action_dim];
        if widths.iter().chain(&self.shared_layers).any(|&w| w == 0) {
            return Err(Error::config("network", "all layer widths must be >= 1"));
        }
        Ok(())
    }

    pub fn trunk_width(&self) -> usize {
        *self.shared_layers.last().unwrap_or(&self.input_dim)
    }
}

/// A dense layer, `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Every trainable tensor of the network. Gradients and optimizer moments
/// share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub trunk: Vec<Dense>,
    pub policy_hidden: Dense,
    pub policy_out: Dense,
    pub value_hidden: Dense,
    pub value_out: Dense,
    pub log_std: Array1<f64>,
}

impl Weights {
    pub fn zeros(arch: &NetArch) -> Self {
        let mut trunk = Vec::with_capacity(arch.shared_layers.len());
        let mut fan_in = arch.input_dim;
        for &w in &arch.shared_layers {
            trunk.push(Dense::zeros(fan_in, w));
            fan_in = w;
        }
        Self {
            trunk,
            policy_hidden: Dense::zeros(fan_in, arch.head_hidden),
            policy_out: Dense::zeros(arch.head_hidden, arch.action_dim),
            value_hidden: Dense::zeros(fan_in, arch.head_hidden),
            value_out: Dense::zeros(arch.head_hidden, 1),
            log_std: Array1::zeros(arch.action_dim),
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, d) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.{i}.weight"), slice(&d.w)));
            out.push((format!("trunk.{i}.bias"), d.b.as_slice().unwrap()));
        }
        for (name, d) in [
            ("policy_hidden", &self.policy_hidden),
            ("policy_out", &self.policy_out),
            ("value_hidden", &self.value_hidden),
            ("value_out", &self.value_out),
        ] {
            out.push((format!("{name}.weight"), slice(&d.w)));
            out.push((format!("{name}.bias"), d.b.as_slice().unwrap()));
        }
        out.push(("log_std".into(), self.log_std.as_slice().unwrap()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, d) in self.trunk.iter_mut().enumerate() {
            out.push((format!("trunk.{i}.weight"), d.w.as_slice_mut().unwrap()));
            out.push((format!("trunk.{i}.bias"), d.b.as_slice_mut().unwrap()));
        }
        for (name, d) in [
            ("policy_hidden", &mut self.policy_hidden),
            ("policy_out", &mut self.policy_out),
            ("value_hidden", &mut self.value_hidden),
            ("value_out", &mut self.value_out),
        ] {
            out.push((format!("{name}.weight"), d.w.as_slice_mut().unwrap()));
            out.push((format!("{name}.bias"), d.b.as_slice_mut().unwrap()));
        }
        out.push(("log_std".into(), self.log_std.as_slice_mut().unwrap()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += other`, block by block.
    pub fn add_assign(&mut self, other: &Weights) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("weights are stored in standard layout")
}

/// Network weights plus the metadata needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: NetArch,
    pub weights: Weights,
    /// Per-component observation scales the environment divided by.
    pub obs_scales: Vec<f64>,
}

/// Reverse-pass gradients, congruent with [`Weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer(pub Weights);

/// Orthogonal matrix of shape `[rows, cols]` scaled by `gain`.
fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    // Orthonormalize the columns of a tall Gaussian matrix, transposing if
    // the requested shape is wide.
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q = Array2::<f64>::zeros((tall, short));
    q.mapv_inplace(|_| rng.sample(StandardNormal));
    for j in 0..short {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let col_k = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &col_k);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    let q = if rows >= cols { q } else { q.reversed_axes() };
    let mut out = Array2::zeros((rows, cols));
    out.assign(&(q * gain));
    out
}

impl PolicyParams {
    /// Orthogonal initialization: gain sqrt(2) on hidden layers, 0.01 on the
    /// action-mean output, 1 on the value output; zero biases.
    pub fn init<R: Rng>(
        arch: NetArch,
        obs_scales: Vec<f64>,
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        if obs_scales.len() != arch.input_dim {
            return Err(Error::Shape(format!(
                "{} observation scales for input dimension {}",
                obs_scales.len(),
                arch.input_dim
            )));
        }
        let mut w = Weights::zeros(&arch);
        let hidden_gain = 2f64.sqrt();
        for d in w.trunk.iter_mut() {
            let (i, o) = d.w.dim();
            d.w = orthogonal(i, o, hidden_gain, rng);
        }
        for (d, gain) in [
            (&mut w.policy_hidden, hidden_gain),
            (&mut w.value_hidden, hidden_gain),
            (&mut w.policy_out, 0.01),
            (&mut w.value_out, 1.0),
        ] {
            let (i, o) = d.w.dim();
            d.w = orthogonal(i, o, gain, rng);
        }
        w.log_std.fill(log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(Self {
            arch,
            weights: w,
            obs_scales,
        })
    }

    pub fn num_params(&self) -> usize {
        self.weights.num_params()
    }

    pub fn log_std(&self) -> &[f64] {
        self.weights.log_std.as_slice().unwrap()
    }
}

/// Outputs of a single-observation forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

/// Intermediate activations of a batched forward pass, kept for the reverse
/// pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    trunk: Vec<Array2<f64>>,
    policy_hidden: Array2<f64>,
    value_hidden: Array2<f64>,
    pub mu: Array2<f64>,
    pub value: Array1<f64>,
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Batched forward pass over rows of `obs`.
pub fn forward_batch(params: &PolicyParams, obs: ArrayView2<f64>) -> Result<ForwardCache> {
    if obs.ncols() != params.arch.input_dim {
        return Err(Error::Shape(format!(
            "observation width {} != input dimension {}",
            obs.ncols(),
            params.arch.input_dim
        )));
    }
    let w = &params.weights;
    let mut trunk = Vec::with_capacity(w.trunk.len());
    let mut x = obs.to_owned();
    for layer in &w.trunk {
        let h = relu(layer.apply(x.view()));
        trunk.push(h.clone());
        x = h;
    }
    let policy_hidden = relu(w.policy_hidden.apply(x.view()));
    let value_hidden = relu(w.value_hidden.apply(x.view()));
    let mu = w.policy_out.apply(policy_hidden.view());
    let value = w.value_out.apply(value_hidden.view()).column(0).to_owned();
    if !(mu.iter().all(|v| v.is_finite()) && value.iter().all(|v| v.is_finite())) {
        return Err(Error::non_finite("network forward pass"));
    }
    Ok(ForwardCache {
        input: obs.to_owned(),
        trunk,
        policy_hidden,
        value_hidden,
        mu,
        value,
    })
}

/// Smallest `|pre-activation|` over every hidden unit and row. Finite
/// differences are only trustworthy when this is well above the step size.
pub fn preactivation_margin(params: &PolicyParams, obs: ArrayView2<f64>) -> f64 {
    let w = &params.weights;
    let min_abs = |a: &Array2<f64>| a.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut margin = f64::INFINITY;
    let mut x = obs.to_owned();
    for layer in &w.trunk {
        let pre = layer.apply(x.view());
        margin = margin.min(min_abs(&pre));
        x = relu(pre);
    }
    for head in [&w.policy_hidden, &w.value_hidden] {
        margin = margin.min(min_abs(&head.apply(x.view())));
    }
    margin
}

pub fn forward(params: &PolicyParams, obs: &[f64]) -> Result<PolicyOutput> {
    if !obs.iter().all(|x| x.is_finite()) {
        return Err(Error::non_finite("observation"));
    }
    let view = ArrayView2::from_shape((1, obs.len()), obs)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let cache = forward_batch(params, view)?;
    Ok(PolicyOutput {
        mu: cache.mu.row(0).to_vec(),
        log_std: params.log_std().to_vec(),
        value: cache.value[0],
    })
}

/// Action mean only; the evaluation-time policy.
pub fn deterministic_action(params: &PolicyParams, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(params, obs)?.mu)
}

/// Backward through one dense layer. Returns the input adjoint when asked.
fn dense_backward(
    layer: &Dense,
    input: ArrayView2<f64>,
    d_out: &Array2<f64>,
    grad: &mut Dense,
    want_input: bool,
) -> Option<Array2<f64>> {
    grad.w += &input.t().dot(d_out);
    grad.b += &d_out.sum_axis(Axis(0));
    want_input.then(|| d_out.dot(&layer.w.t()))
}

fn relu_mask(mut d: Array2<f64>, post: &Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(&mut d).and(post).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

/// Exact reverse-mode gradients for adjoints at the network outputs.
///
/// `d_mu` is `[n, action_dim]`, `d_value` is `[n]`, `d_log_std` is
/// `[action_dim]` (log-std is shared across the batch).
pub fn backward(
    params: &PolicyParams,
    cache: &ForwardCache,
    d_mu: ArrayView2<f64>,
    d_log_std: ArrayView1<f64>,
    d_value: ArrayView1<f64>,
) -> Result<GradientBuffer> {
    let n = cache.input.nrows();
    let a = &params.arch;
    if d_mu.dim() != (n, a.action_dim) || d_value.len() != n || d_log_std.len() != a.action_dim {
        return Err(Error::Shape(format!(
            "adjoint shapes mu {:?}, value {}, log_std {} for batch {} and action dim {}",
            d_mu.dim(),
            d_value.len(),
            d_log_std.len(),
            n,
            a.action_dim
        )));
    }
    let w = &params.weights;
    let mut g = Weights::zeros(a);
    let trunk_out = cache.trunk.last().unwrap_or(&cache.input);

    let d_mu = d_mu.to_owned();
    let d_ph = dense_backward(
        &w.policy_out,
        cache.policy_hidden.view(),
        &d_mu,
        &mut g.policy_out,
        true,
    )
    .unwrap();
    let d_ph = relu_mask(d_ph, &cache.policy_hidden);
    let mut d_trunk = dense_backward(&w.policy_hidden, trunk_out.view(), &d_ph, &mut g.policy_hidden, true)
        .unwrap();

    let d_v = d_value.to_owned().insert_axis(Axis(1));
    let d_vh = dense_backward(
        &w.value_out,
        cache.value_hidden.view(),
        &d_v,
        &mut g.value_out,
        true,
    )
    .unwrap();
    let d_vh = relu_mask(d_vh, &cache.value_hidden);
    d_trunk += &dense_backward(&w.value_hidden, trunk_out.view(), &d_vh, &mut g.value_hidden, true)
        .unwrap();

    for i in (0..w.trunk.len()).rev() {
        let d_pre = relu_mask(d_trunk, &cache.trunk[i]);
        let input = if i == 0 {
            cache.input.view()
        } else {
            cache.trunk[i - 1].view()
        };
        d_trunk = dense_backward(&w.trunk[i], input, &d_pre, &mut g.trunk[i], i > 0)
            .unwrap_or_else(|| Array2::zeros((0, 0)));
    }
    g.log_std.assign(&d_log_std);
    Ok(GradientBuffer(g))
}

/// Draw a standard-normal vector, exposed for callers that want to reuse
/// noise between evaluations.
pub fn standard_normal<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> NetArch {
        NetArch {
            input_dim: 8,
            shared_layers: vec![16],
            head_hidden: 16,
            action_dim: 5,
            activation: Activation::Relu,
        }
    }

    fn random_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::init(small_arch(), vec![1.0; 8], 0.0, &mut rng).unwrap();
        // Spread all weights so every block carries signal.
        for (_, b) in p.weights.blocks_mut() {
            for x in b.iter_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    /// Straightforward per-sample evaluation with explicit loops.
    fn naive_forward(p: &PolicyParams, x: &[f64]) -> (Vec<f64>, f64) {
        let layer = |d: &Dense, x: &[f64], relu: bool| -> Vec<f64> {
            let fo = d.w.ncols();
            (0..fo)
                .map(|o| {
                    let mut s = d.b[o];
                    for (i, xi) in x.iter().enumerate() {
                        s += xi * d.w[[i, o]];
                    }
                    if relu {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect()
        };
        let mut h = x.to_vec();
        for d in &p.weights.trunk {
            h = layer(d, &h, true);
        }
        let ph = layer(&p.weights.policy_hidden, &h, true);
        let vh = layer(&p.weights.value_hidden, &h, true);
        (
            layer(&p.weights.policy_out, &ph, false),
            layer(&p.weights.value_out, &vh, false)[0],
        )
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = small_arch();
        let p = PolicyParams {
            weights: Weights::zeros(&arch),
            arch,
            obs_scales: vec![1.0; 8],
        };
        let out = forward(&p, &[0.3; 8]).unwrap();
        assert!(out.mu.iter().all(|&m| m == 0.0));
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn scaling_policy_head_scales_mean() {
        let mut p = random_params(1);
        p.weights.policy_out.b.fill(0.0);
        let obs = [0.1, -0.2, 0.3, 0.0, 0.5, -0.6, 0.7, 0.2];
        let a = forward(&p, &obs).unwrap();
        p.weights.policy_out.w *= 2.0;
        let b = forward(&p, &obs).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu) {
            assert_relative_eq!(2.0 * x, *y, max_relative = 1e-14);
        }
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let p = random_params(seed);
            let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = forward(&p, &obs).unwrap();
            let (mu, v) = naive_forward(&p, &obs);
            assert!((out.value - v).abs() <= 1e-12 * v.abs().max(1.0));
            for (a, b) in out.mu.iter().zip(&mu) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let p = random_params(2);
        let obs = Array2::from_shape_fn((4, 8), |(i, j)| (i as f64 - j as f64) * 0.1);
        let cache = forward_batch(&p, obs.view()).unwrap();
        let g = backward(
            &p,
            &cache,
            Array2::zeros((4, 5)).view(),
            Array1::zeros(5).view(),
            Array1::zeros(4).view(),
        )
        .unwrap();
        assert_eq!(g.0.l2_norm(), 0.0);
    }

    #[test]
    fn value_adjoint_leaves_policy_head_untouched() {
        let p = random_params(3);
        let obs = Array2::from_shape_fn((3, 8), |(i, j)| ((i * 8 + j) as f64).sin());
        let cache = forward_batch(&p, obs.view()).unwrap();
        let g = backward(
            &p,
            &cache,
            Array2::zeros((3, 5)).view(),
            Array1::zeros(5).view(),
            Array1::from_vec(vec![1.0, -2.0, 0.5]).view(),
        )
        .unwrap();
        assert!(g.0.policy_out.w.iter().all(|&x| x == 0.0));
        assert!(g.0.policy_hidden.w.iter().all(|&x| x == 0.0));
        assert!(g.0.value_out.w.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        // Scalar functional: sum of weighted outputs.
        let p = random_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let obs = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let w_mu = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let w_v = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let w_ls = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let functional = |p: &PolicyParams| {
            let c = forward_batch(p, obs.view()).unwrap();
            (&c.mu * &w_mu).sum() + (&c.value * &w_v).sum() + (&p.weights.log_std * &w_ls).sum()
        };
        let cache = forward_batch(&p, obs.view()).unwrap();
        let g = backward(&p, &cache, w_mu.view(), w_ls.view(), w_v.view()).unwrap();

        let h = 1e-5;
        let grads: Vec<(String, Vec<f64>)> = g
            .0
            .blocks()
            .into_iter()
            .map(|(n, b)| (n, b.to_vec()))
            .collect();
        for (bi, (name, analytic)) in grads.iter().enumerate() {
            for (k, &a) in analytic.iter().enumerate() {
                let mut plus = p.clone();
                plus.weights.blocks_mut()[bi].1[k] += h;
                let mut minus = p.clone();
                minus.weights.blocks_mut()[bi].1[k] -= h;
                let fd = (functional(&plus) - functional(&minus)) / (2.0 * h);
                let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
                assert!(err < 1e-6, "{name}[{k}]: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn shipped_architecture_parameter_count() {
        let arch = NetArch {
            input_dim: 8,
            shared_layers: vec![256, 256],
            head_hidden: 128,
            action_dim: 5,
            activation: Activation::Relu,
        };
        let p = PolicyParams::init(arch, vec![1.0; 8], 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(p.num_params(), 134_667);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let q = orthogonal(12, 5, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let gram = q.t().dot(&q);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_action_is_the_mean() {
        let p = random_params(7);
        let obs = [0.2; 8];
        let a = deterministic_action(&p, &obs).unwrap();
        let b = deterministic_action(&p, &obs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, forward(&p, &obs).unwrap().mu);
    }

    #[test]
    fn rejects_wrong_observation_width() {
        let p = random_params(8);
        assert!(matches!(forward(&p, &[0.0; 7]), Err(Error::Shape(_))));
        assert!(matches!(
            forward(&p, &[f64::NAN; 8]),
            Err(Error::NonFinite { .. })
        ));
    }
}
