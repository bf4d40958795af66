//! Shuttle reentry MDP: latitude maximization and debris avoidance.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Env, Termination, Transition};
use crate::controller::{control_from_desired_dynamics, DesiredRates};
use crate::error::{Error, Result};
use crate::hlas::{decode_action, eval_segment, fit_segment, HlasConfig};
use crate::vehicle::{
    check_path_constraints, clamp_controls, density, heating, rk4_step, ControlInput,
    PathConstraint, VehicleParams, VehicleState, Verdict, DEG,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Maximize final latitude while meeting an (h, v, gamma) terminal set.
    LatitudeMax,
    /// Reach an (h, theta, phi) location around a fixed obstacle field.
    DebrisAvoidance,
}

/// What the polynomial channels of an action denote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// `(alpha_cmd, sigma_cmd)` in radians.
    Control,
    /// `(gamma_dot_des, psi_dot_des)` in rad/s, realized by the tracking
    /// controller.
    DesiredDynamics,
}

/// Axis-aligned ellipse in the longitude-latitude plane, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_theta: f64,
    pub center_phi: f64,
    pub semi_axis_theta: f64,
    pub semi_axis_phi: f64,
}

impl Ellipse {
    pub fn contains(&self, theta: f64, phi: f64) -> bool {
        let u = (theta - self.center_theta) / self.semi_axis_theta;
        let w = (phi - self.center_phi) / self.semi_axis_phi;
        u * u + w * w <= 1.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    pub ellipses: Vec<Ellipse>,
}

impl ObstacleMap {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.ellipses.iter().enumerate() {
            let ok = [e.center_theta, e.center_phi].iter().all(|x| x.is_finite())
                && e.semi_axis_theta > 0.0
                && e.semi_axis_phi > 0.0
                && e.semi_axis_theta.is_finite()
                && e.semi_axis_phi.is_finite();
            if !ok {
                return Err(Error::config(
                    format!("obstacles[{i}]"),
                    "centers must be finite and semi-axes strictly positive",
                ));
            }
        }
        Ok(())
    }

    /// Random field of `count` ellipses whose centers lie in the southern
    /// half-annulus `r_inner..r_outer` around `(theta_c, phi_c)`. All
    /// arguments in radians.
    pub fn generate(
        seed: u64,
        count: usize,
        (theta_c, phi_c): (f64, f64),
        (r_inner, r_outer): (f64, f64),
        (axis_min, axis_max): (f64, f64),
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ellipses = (0..count)
            .map(|_| {
                let r = rng.random_range(r_inner..r_outer);
                let beta = rng.random_range(0.0..std::f64::consts::PI);
                Ellipse {
                    center_theta: theta_c + r * beta.cos(),
                    center_phi: phi_c - r * beta.sin(),
                    semi_axis_theta: rng.random_range(axis_min..axis_max),
                    semi_axis_phi: rng.random_range(axis_min..axis_max),
                }
            })
            .collect();
        Self { ellipses }
    }
}

/// Initial-condition distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialConditions {
    /// Independent uniform perturbation of every component.
    Box {
        nominal: VehicleState,
        halfwidths: [f64; 8],
    },
    /// Start on the southern half of a ring around a target location,
    /// pointed at it. Angles in radians.
    Ring {
        theta_c: f64,
        phi_c: f64,
        radius: f64,
        radius_halfwidth: f64,
        heading_error: f64,
        h: f64,
        h_halfwidth: f64,
        v: f64,
        v_halfwidth: f64,
        gamma: f64,
        gamma_halfwidth: f64,
    },
}

fn uniform(rng: &mut ChaCha8Rng, center: f64, half: f64) -> f64 {
    center + half * rng.random_range(-1.0..=1.0)
}

impl InitialConditions {
    /// Same distribution with every perturbation width multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match self.clone() {
            InitialConditions::Box {
                nominal,
                halfwidths,
            } => InitialConditions::Box {
                nominal,
                halfwidths: halfwidths.map(|w| w * k),
            },
            InitialConditions::Ring {
                theta_c,
                phi_c,
                radius,
                radius_halfwidth,
                heading_error,
                h,
                h_halfwidth,
                v,
                v_halfwidth,
                gamma,
                gamma_halfwidth,
            } => InitialConditions::Ring {
                theta_c,
                phi_c,
                radius,
                radius_halfwidth: radius_halfwidth * k,
                heading_error: heading_error * k,
                h,
                h_halfwidth: h_halfwidth * k,
                v,
                v_halfwidth: v_halfwidth * k,
                gamma,
                gamma_halfwidth: gamma_halfwidth * k,
            },
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> VehicleState {
        match self {
            InitialConditions::Box {
                nominal,
                halfwidths,
            } => {
                let x = nominal.to_array();
                let mut out = [0.0; 8];
                for i in 0..8 {
                    out[i] = uniform(rng, x[i], halfwidths[i]);
                }
                VehicleState::from_array(out)
            }
            InitialConditions::Ring {
                theta_c,
                phi_c,
                radius,
                radius_halfwidth,
                heading_error,
                h,
                h_halfwidth,
                v,
                v_halfwidth,
                gamma,
                gamma_halfwidth,
            } => {
                let r = uniform(rng, *radius, *radius_halfwidth);
                let beta = rng.random_range(0.0..=std::f64::consts::PI);
                let theta = theta_c + r * beta.cos();
                let phi = phi_c - r * beta.sin();
                let bearing = (theta_c - theta).atan2(phi_c - phi);
                VehicleState {
                    h: uniform(rng, *h, *h_halfwidth),
                    v: uniform(rng, *v, *v_halfwidth),
                    theta,
                    phi,
                    gamma: uniform(rng, *gamma, *gamma_halfwidth),
                    psi: uniform(rng, bearing, *heading_error),
                    alpha: 0.0,
                    sigma: 0.0,
                }
            }
        }
    }
}

/// Everything that defines one training problem. Angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub channels: ChannelKind,
    pub hlas: HlasConfig,
    /// `(h, v, gamma)` or `(h, theta, phi)`.
    pub target: [f64; 3],
    pub terminal_scales: [f64; 3],
    pub terminal_tolerances: [f64; 3],
    /// Weight `c0` of the bounded inverse terminal distance.
    pub terminal_weight: f64,
    pub initial: InitialConditions,
    pub max_action_steps: usize,
    pub dt: f64,
    pub obs_scales: [f64; 8],
    pub obstacles: ObstacleMap,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.hlas.validate()?;
        if self.hlas.n_channels() != 2 {
            return Err(Error::config("hlas", "reentry actions need exactly two channels"));
        }
        let positive = |xs: &[f64]| xs.iter().all(|&x| x > 0.0 && x.is_finite());
        if !positive(&self.terminal_scales) {
            return Err(Error::config("problem.scales", "must be strictly positive"));
        }
        if !positive(&self.terminal_tolerances) {
            return Err(Error::config("problem.tolerances", "must be strictly positive"));
        }
        if !positive(&self.obs_scales) {
            return Err(Error::config("simulation.obs_scales", "must be strictly positive"));
        }
        if !positive(&[self.dt]) {
            return Err(Error::config("simulation.dt", "must be strictly positive"));
        }
        if self.max_action_steps == 0 {
            return Err(Error::config("simulation.max_action_steps", "must be >= 1"));
        }
        if !(self.terminal_weight >= 0.0) {
            return Err(Error::config("problem.terminal_weight", "must be non-negative"));
        }
        self.obstacles.validate()
    }

    /// Terminal-set coordinates of `state` in the order of `target`.
    pub fn terminal_components(&self, s: &VehicleState) -> [f64; 3] {
        match self.kind {
            ProblemKind::LatitudeMax => [s.h, s.v, s.gamma],
            ProblemKind::DebrisAvoidance => [s.h, s.theta, s.phi],
        }
    }

    /// Terminal ellipsoid measure `Psi`.
    pub fn terminal_distance(&self, s: &VehicleState) -> f64 {
        let x = self.terminal_components(s);
        (0..3)
            .map(|i| ((x[i] - self.target[i]) / self.terminal_scales[i]).powi(2))
            .sum()
    }

    pub fn observe(&self, s: &VehicleState) -> Vec<f64> {
        s.to_array()
            .iter()
            .zip(&self.obs_scales)
            .map(|(x, k)| x / k)
            .collect()
    }
}

/// Latitude reward, with latitude in degrees.
pub fn latitude_reward(phi: f64) -> f64 {
    let deg = phi / DEG;
    if deg < 0.0 {
        deg.exp()
    } else {
        1.0 + deg
    }
}

pub fn terminal_check(state: &VehicleState, spec: &ProblemSpec) -> bool {
    let x = spec.terminal_components(state);
    (0..3).all(|i| (x[i] - spec.target[i]).abs() <= spec.terminal_tolerances[i])
}

pub fn obstacle_check(state: &VehicleState, map: &ObstacleMap) -> bool {
    map.ellipses.iter().any(|e| e.contains(state.theta, state.phi))
}

/// Reward emitted on the step that ended with `cause`.
pub fn reward_fn(state_end: &VehicleState, cause: Termination, spec: &ProblemSpec) -> f64 {
    let phi_term = match spec.kind {
        ProblemKind::LatitudeMax => latitude_reward(state_end.phi),
        ProblemKind::DebrisAvoidance => 0.0,
    };
    match cause {
        Termination::Goal => {
            let psi = spec.terminal_distance(state_end);
            phi_term + spec.terminal_weight * (1.0 / psi).min(1.0)
        }
        Termination::Timeout => phi_term,
        Termination::None | Termination::ConstraintViolation | Termination::Obstacle => 0.0,
    }
}

/// One integrator step of an executed sub-trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Time at the end of the integrator step, seconds since reset.
    pub t: f64,
    pub state: VehicleState,
    /// Command held over the step, after clamping.
    pub control: ControlInput,
    pub q: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub elapsed: f64,
    pub effective_tau: f64,
    pub n_sub: usize,
    pub peak_heating: f64,
    pub saturation_count: usize,
    pub violated: Option<PathConstraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub cause: Termination,
    pub info: StepInfo,
    /// Empty unless tracing is enabled on the environment.
    pub trace: Vec<TraceRow>,
}

pub struct ReentryEnv {
    spec: Arc<ProblemSpec>,
    vehicle: Arc<VehicleParams>,
    state: VehicleState,
    time: f64,
    steps: usize,
    prev_last: Option<Vec<f64>>,
    done: bool,
    record_trace: bool,
    peak_heating: f64,
}

impl ReentryEnv {
    pub fn new(spec: Arc<ProblemSpec>, vehicle: Arc<VehicleParams>) -> Result<Self> {
        spec.validate()?;
        vehicle.validate()?;
        let state = match &spec.initial {
            InitialConditions::Box { nominal, .. } => *nominal,
            InitialConditions::Ring { .. } => spec.initial.scaled(0.0).sample(&mut ChaCha8Rng::seed_from_u64(0)),
        };
        Ok(Self {
            spec,
            vehicle,
            state,
            time: 0.0,
            steps: 0,
            prev_last: None,
            done: true,
            record_trace: false,
            peak_heating: 0.0,
        })
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn vehicle(&self) -> &VehicleParams {
        &self.vehicle
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn action_steps(&self) -> usize {
        self.steps
    }

    /// Begin an episode from an explicit state.
    pub fn reset_to(&mut self, state: VehicleState) -> Vec<f64> {
        self.state = state;
        self.time = 0.0;
        self.steps = 0;
        self.prev_last = None;
        self.done = false;
        self.peak_heating = 0.0;
        self.spec.observe(&state)
    }

    pub fn reset_sampled(&mut self, rng: &mut ChaCha8Rng) -> (VehicleState, Vec<f64>) {
        let s = self.spec.initial.sample(rng);
        let obs = self.reset_to(s);
        (s, obs)
    }

    fn command(&self, z: &[f64], info: &mut StepInfo) -> Result<ControlInput> {
        let v = &self.vehicle;
        match self.spec.channels {
            ChannelKind::Control => {
                let raw = ControlInput::new(z[0], z[1]);
                let clamped = clamp_controls(&raw, v);
                if clamped != raw {
                    info.saturation_count += 1;
                }
                Ok(clamped)
            }
            ChannelKind::DesiredDynamics => {
                let rates = DesiredRates {
                    gamma_dot: z[0],
                    psi_dot: z[1],
                };
                let (u, cmd) = control_from_desired_dynamics(&self.state, &rates, v)?;
                if cmd.saturated {
                    info.saturation_count += 1;
                }
                Ok(u)
            }
        }
    }

    /// Execute one decoded sub-trajectory from a raw action in `[-1, 1]^n`.
    pub fn step_action(&mut self, raw: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::InvalidArgument("step called on a finished episode".into()));
        }
        let spec = Arc::clone(&self.spec);
        let mut action = decode_action(raw, &spec.hlas)?;
        if spec.hlas.continuity {
            if let Some(last) = &self.prev_last {
                for (c, v) in last.iter().enumerate() {
                    action.nodes[c][0] = *v;
                }
            }
        }
        let mut seg = fit_segment(&action, &spec.hlas)?;
        let n_sub = ((seg.tau / spec.dt).round() as usize).max(1);
        seg.tau = n_sub as f64 * spec.dt;

        let mut info = StepInfo {
            effective_tau: seg.tau,
            n_sub,
            ..StepInfo::default()
        };
        let mut trace = Vec::new();
        let mut cause = Termination::None;
        let last_safe = self.state;

        for k in 0..n_sub {
            let z = eval_segment(&seg, k as f64 * spec.dt)?;
            let outcome = self
                .command(&z, &mut info)
                .and_then(|u| rk4_step(&self.state, &u, spec.dt, &self.vehicle).map(|s| (u, s)));
            let (u, next) = match outcome {
                Ok(pair) => pair,
                Err(Error::Domain(_)) | Err(Error::NonFinite { .. }) => {
                    cause = Termination::ConstraintViolation;
                    break;
                }
                Err(e) => return Err(e),
            };
            let q = heating(&next, density(next.h, &self.vehicle), &self.vehicle);
            self.time += spec.dt;
            self.state = next;
            self.peak_heating = self.peak_heating.max(q);
            if self.record_trace {
                trace.push(TraceRow {
                    t: self.time,
                    state: next,
                    control: u,
                    q,
                });
            }
            if let Verdict::Violated(c) = check_path_constraints(&next, q, &self.vehicle) {
                info.violated = Some(c);
                cause = Termination::ConstraintViolation;
                break;
            }
            if obstacle_check(&next, &spec.obstacles) {
                cause = Termination::Obstacle;
                break;
            }
        }
        self.steps += 1;
        if cause == Termination::None {
            self.prev_last = Some(eval_segment(&seg, seg.tau)?);
            if terminal_check(&self.state, &spec) {
                cause = Termination::Goal;
            } else if self.steps >= spec.max_action_steps {
                cause = Termination::Timeout;
            }
        }
        let reward = reward_fn(&self.state, cause, &spec);
        self.done = cause.is_terminal();
        info.elapsed = self.time;
        info.peak_heating = self.peak_heating;
        let emitted = match cause {
            Termination::ConstraintViolation | Termination::Obstacle => last_safe,
            _ => self.state,
        };
        Ok(StepResult {
            observation: spec.observe(&emitted),
            reward,
            terminated: self.done,
            cause,
            info,
            trace,
        })
    }
}

impl Env for ReentryEnv {
    fn observation_dim(&self) -> usize {
        VehicleState::DIM
    }

    fn action_dim(&self) -> usize {
        self.spec.hlas.action_dim()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.reset_sampled(rng).1
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = self.step_action(action)?;
        Ok(Transition {
            observation: r.observation,
            reward: r.reward,
            cause: r.cause,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{experiment, shuttle};
    use proptest::prelude::*;
    use rand::Rng;

    fn problem1() -> ProblemSpec {
        experiment().problem("latitude-max", "hlas-control").unwrap()
    }

    fn problem2() -> ProblemSpec {
        experiment().problem("debris-avoidance", "hlas-control").unwrap()
    }

    fn env(spec: ProblemSpec) -> ReentryEnv {
        ReentryEnv::new(Arc::new(spec), Arc::new(shuttle())).unwrap()
    }

    fn at_target(spec: &ProblemSpec) -> VehicleState {
        VehicleState {
            h: spec.target[0],
            v: spec.target[1],
            gamma: spec.target[2],
            phi: 0.0,
            ..nominal(spec)
        }
    }

    fn nominal(spec: &ProblemSpec) -> VehicleState {
        match &spec.initial {
            InitialConditions::Box { nominal, .. } => *nominal,
            _ => unreachable!(),
        }
    }

    /// Raw action whose decoded duration is `tau` with constant nodes.
    fn raw_with_tau(spec: &ProblemSpec, tau: f64, node: f64) -> Vec<f64> {
        let h = &spec.hlas;
        let r0 = 2.0 * (tau - h.tau_min) / (h.tau_max - h.tau_min) - 1.0;
        let mut raw = vec![node; h.action_dim()];
        raw[0] = r0;
        raw
    }

    #[test]
    fn nominal_initial_condition() {
        let spec = problem1();
        let s = nominal(&spec);
        assert_eq!(s.h, 79248.0);
        assert_eq!(s.v, 7802.0);
        assert!((s.psi - 90.0 * DEG).abs() < 1e-15);
        assert!((s.gamma + DEG).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = spec.initial.scaled(0.0);
        assert_eq!(zero.sample(&mut rng), s);
    }

    #[test]
    fn box_sampling_covers_interval() {
        let spec = problem1();
        let InitialConditions::Box {
            nominal,
            halfwidths,
        } = spec.initial.clone()
        else {
            unreachable!()
        };
        let x0 = nominal.to_array();
        let mut lo = [f64::INFINITY; 8];
        let mut hi = [f64::NEG_INFINITY; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x = spec.initial.sample(&mut rng).to_array();
            for i in 0..8 {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
        for i in 0..8 {
            assert!(lo[i] >= x0[i] - halfwidths[i] && hi[i] <= x0[i] + halfwidths[i]);
            if halfwidths[i] > 0.0 {
                assert!((hi[i] - lo[i]) >= 0.95 * 2.0 * halfwidths[i], "component {i}");
            }
        }
    }

    #[test]
    fn ring_sampling_points_at_target() {
        let spec = problem2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = spec.initial.sample(&mut rng);
            let (dth, dph) = (spec.target[1] - s.theta, spec.target[2] - s.phi);
            let r = dth.hypot(dph);
            assert!((45.0 * DEG - 1e-12..=55.0 * DEG + 1e-12).contains(&r));
            assert!(s.phi <= spec.target[2] + 1e-12);
            let bearing = dth.atan2(dph);
            assert!((s.psi - bearing).abs() <= 5.0 * DEG + 1e-12);
            assert!((s.h - 79248.0).abs() <= 2000.0);
            assert!((s.v - 7802.0).abs() <= 100.0);
            assert!((s.gamma + DEG).abs() <= DEG + 1e-15);
        }
    }

    #[test]
    fn reward_at_target_is_six() {
        let spec = problem1();
        let s = at_target(&spec);
        assert_eq!(reward_fn(&s, Termination::Goal, &spec), 6.0);
        assert_eq!(latitude_reward(0.0), 1.0);
        assert_eq!(latitude_reward(-0.0), 1.0);
    }

    #[test]
    fn reward_one_scale_offset() {
        let spec = problem1();
        let s = VehicleState {
            h: spec.target[0] + 250.0,
            v: spec.target[1] + 8.0,
            gamma: spec.target[2] + 0.1 * DEG,
            ..at_target(&spec)
        };
        let r = reward_fn(&s, Termination::Goal, &spec);
        assert!((r - (1.0 + 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_by_cause() {
        let spec = problem1();
        let s = VehicleState {
            phi: 30.0 * DEG,
            ..at_target(&spec)
        };
        assert!((reward_fn(&s, Termination::Timeout, &spec) - 31.0).abs() < 1e-12);
        assert_eq!(reward_fn(&s, Termination::ConstraintViolation, &spec), 0.0);
        assert_eq!(reward_fn(&s, Termination::Obstacle, &spec), 0.0);
        assert_eq!(reward_fn(&s, Termination::None, &spec), 0.0);
        let south = VehicleState {
            phi: -2.0 * DEG,
            ..s
        };
        assert!((reward_fn(&south, Termination::Timeout, &spec) - (-2f64).exp()).abs() < 1e-15);

        let spec2 = problem2();
        let s2 = VehicleState {
            h: spec2.target[0],
            theta: spec2.target[1],
            phi: spec2.target[2],
            ..s
        };
        assert_eq!(reward_fn(&s2, Termination::Goal, &spec2), 5.0);
        assert_eq!(reward_fn(&s2, Termination::Timeout, &spec2), 0.0);
    }

    #[test]
    fn terminal_check_bounds() {
        let spec = problem1();
        let t = at_target(&spec);
        assert!(terminal_check(&t, &spec));
        let tol = spec.terminal_tolerances;
        let edge = VehicleState {
            h: spec.target[0] + tol[0],
            v: spec.target[1] - tol[1],
            gamma: spec.target[2] + tol[2],
            ..t
        };
        let x = spec.terminal_components(&edge);
        if (0..3).all(|i| (x[i] - spec.target[i]).abs() <= tol[i]) {
            assert!(terminal_check(&edge, &spec));
        }
        let over = VehicleState {
            h: (spec.target[0] + tol[0]).next_up(),
            ..t
        };
        assert!(!terminal_check(&over, &spec));
        let exact_h = VehicleState {
            h: 24884.0,
            ..t
        };
        assert!(terminal_check(&exact_h, &spec));
    }

    #[test]
    fn obstacle_membership() {
        let e = Ellipse {
            center_theta: 0.1,
            center_phi: 0.5,
            semi_axis_theta: 0.25,
            semi_axis_phi: 0.5,
        };
        let map = ObstacleMap { ellipses: vec![e] };
        let s = |theta, phi| VehicleState {
            theta,
            phi,
            ..VehicleState::from_array([0.0; 8])
        };
        assert!(obstacle_check(&s(0.1, 0.5), &map));
        assert!(obstacle_check(&s(0.35, 0.5), &map));
        assert!(obstacle_check(&s(0.1, 0.0), &map));
        assert!(!obstacle_check(&s(0.36, 0.5), &map));
        assert!(!obstacle_check(&s(0.1, 0.5), &ObstacleMap::default()));
    }

    #[test]
    fn substep_count_follows_tau() {
        let spec = problem1();
        let mut e = env(spec.clone());
        e.reset_to(nominal(&spec));
        let r = e.step_action(&raw_with_tau(&spec, 4.0, 0.0)).unwrap();
        assert_eq!(r.info.n_sub, 2);
        assert_eq!(r.info.effective_tau, 4.0);
        e.reset_to(nominal(&spec));
        let r = e.step_action(&raw_with_tau(&spec, 2.0, 0.0)).unwrap();
        assert_eq!(r.info.n_sub, 1);
        e.reset_to(nominal(&spec));
        let r = e.step_action(&raw_with_tau(&spec, 4.9, 0.0)).unwrap();
        assert_eq!(r.info.n_sub, 2);
        assert_eq!(e.time(), 4.0);
    }

    #[test]
    fn violation_mid_segment_terminates_with_zero() {
        let spec = problem1();
        let mut e = env(spec.clone()).with_trace(true);
        // Steep dive: fails the flight-path limit long before 30 s.
        let start = VehicleState {
            h: 40000.0,
            gamma: -19.9 * DEG,
            alpha: 0.0,
            ..nominal(&spec)
        };
        e.reset_to(start);
        let r = e.step_action(&raw_with_tau(&spec, 30.0, -1.0)).unwrap();
        assert!(r.terminated);
        assert_eq!(r.cause, Termination::ConstraintViolation);
        assert_eq!(r.reward, 0.0);
        assert!(r.trace.len() < r.info.n_sub);
        assert!(r.info.violated.is_some());
        assert_eq!(r.observation, spec.observe(&start));
        assert!(e.step_action(&raw_with_tau(&spec, 2.0, 0.0)).is_err());
    }

    #[test]
    fn emitted_states_are_feasible() {
        let spec = problem1();
        let v = shuttle();
        let mut e = env(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            // The sampled initial state is never checked, so a violation
            // on the first sub-step re-emits it unchecked.
            let first = e.reset(&mut rng);
            loop {
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = e.step_action(&raw).unwrap();
                if r.observation == first {
                    assert!(r.terminated);
                    break;
                }
                let s = VehicleState::from_array(std::array::from_fn(|i| {
                    r.observation[i] * spec.obs_scales[i]
                }));
                let q = heating(&s, density(s.h, &v), &v);
                // Scaling round trip may perturb boundary values by an ulp.
                let relaxed = VehicleState {
                    h: s.h + 1e-6,
                    v: s.v + 1e-9,
                    ..s
                };
                let verdict = check_path_constraints(&relaxed, q - 1e-9, &v);
                assert!(verdict.is_ok(), "{verdict:?} {s:?} q={q} cause={:?}", r.cause);
                assert!(r.reward >= 0.0);
                assert!(e.action_steps() <= spec.max_action_steps);
                if r.terminated {
                    break;
                }
            }
        }
    }

    #[test]
    fn timeout_caps_episode_length() {
        let mut spec = problem1();
        spec.max_action_steps = 3;
        let mut e = env(spec.clone());
        e.reset_to(nominal(&spec));
        let raw = raw_with_tau(&spec, 2.0, 0.0);
        let mut causes = vec![];
        for _ in 0..3 {
            causes.push(e.step_action(&raw).unwrap().cause);
        }
        assert_eq!(causes[..2], [Termination::None, Termination::None]);
        assert_eq!(causes[2], Termination::Timeout);
    }

    #[test]
    fn goal_is_checked_at_segment_end() {
        let mut spec = problem1();
        spec.target = [79248.0, 7802.0, -DEG];
        spec.terminal_tolerances = [5000.0, 200.0, 2.0 * DEG];
        let mut e = env(spec.clone());
        e.reset_to(nominal(&spec));
        let r = e.step_action(&raw_with_tau(&spec, 2.0, 0.0)).unwrap();
        assert_eq!(r.cause, Termination::Goal);
        assert!(r.reward > 1.0);
    }

    #[test]
    fn obstacle_hit_terminates() {
        let mut spec = problem2();
        let start = spec.initial.scaled(0.0).sample(&mut ChaCha8Rng::seed_from_u64(1));
        spec.obstacles = ObstacleMap {
            ellipses: vec![Ellipse {
                center_theta: start.theta,
                center_phi: start.phi,
                semi_axis_theta: 2.0 * DEG,
                semi_axis_phi: 2.0 * DEG,
            }],
        };
        let mut e = env(spec.clone());
        e.reset_to(start);
        let r = e.step_action(&raw_with_tau(&spec, 2.0, 0.0)).unwrap();
        assert_eq!(r.cause, Termination::Obstacle);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn desired_dynamics_channels_run_through_controller() {
        let spec = experiment().problem("latitude-max", "hlas-dynamics").unwrap();
        assert_eq!(spec.channels, ChannelKind::DesiredDynamics);
        let mut e = env(spec.clone()).with_trace(true);
        e.reset_to(nominal(&spec));
        let r = e.step_action(&raw_with_tau(&spec, 10.0, 0.0)).unwrap();
        assert_eq!(r.trace.len(), 5);
        assert!(r.trace.iter().all(|row| row.control.alpha_cmd.abs() <= 45.0 * DEG));
    }

    #[test]
    fn continuity_links_segments() {
        let mut spec = problem1();
        spec.hlas.continuity = true;
        let mut e = env(spec.clone()).with_trace(true);
        e.reset_to(nominal(&spec));
        let first = [0.0, -0.5, 0.5, 0.2, 0.8];
        e.step_action(&first).unwrap();
        let end = e.prev_last.clone().unwrap();
        let r = e.step_action(&[0.0, 0.9, 0.9, -0.9, -0.9]).unwrap();
        let u0 = r.trace[0].control;
        assert!((u0.alpha_cmd - end[0]).abs() < 1e-12);
        assert!((u0.sigma_cmd - end[1]).abs() < 1e-12);
    }

    #[test]
    fn episodes_are_deterministic() {
        let run = || {
            let spec = problem1();
            let mut e = env(spec).with_trace(true);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            e.reset(&mut rng);
            let mut rows = vec![];
            for k in 0..50 {
                let raw: Vec<f64> = (0..5).map(|j| ((k * 5 + j) as f64).sin()).collect();
                let r = e.step_action(&raw).unwrap();
                rows.extend(r.trace.iter().map(|t| t.state.to_array()));
                if r.terminated {
                    break;
                }
            }
            rows
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }

    #[test]
    fn shorter_horizon_has_larger_discounted_return() {
        let r = 6.0;
        for gamma in [0.5f64, 0.9, 0.9999] {
            let ret = |h: i32| gamma.powi(h - 1) * r;
            for h in 1..50 {
                assert!(ret(h) > ret(h + 1));
            }
        }
    }

    #[test]
    fn generated_field_sits_in_annulus() {
        let m = ObstacleMap::generate(7, 20, (0.0, 50.0 * DEG), (10.0 * DEG, 40.0 * DEG), (DEG, 3.0 * DEG));
        assert_eq!(m.ellipses.len(), 20);
        for e in &m.ellipses {
            let r = e.center_theta.hypot(e.center_phi - 50.0 * DEG);
            assert!((10.0 * DEG..40.0 * DEG).contains(&r));
            assert!(e.center_phi <= 50.0 * DEG);
        }
        assert_eq!(m, ObstacleMap::generate(7, 20, (0.0, 50.0 * DEG), (10.0 * DEG, 40.0 * DEG), (DEG, 3.0 * DEG)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rewards_are_never_negative(seed in 0u64..1000, actions in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..30)) {
            let spec = problem1();
            let mut e = env(spec);
            e.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut terminal_rewards = 0;
            for a in &actions {
                let r = e.step_action(a).unwrap();
                prop_assert!(r.reward >= 0.0 && r.reward.is_finite());
                prop_assert_eq!(r.terminated, r.cause.is_terminal());
                if !r.terminated {
                    prop_assert_eq!(r.reward, 0.0);
                }
                if r.reward > 0.0 {
                    terminal_rewards += 1;
                }
                if r.terminated {
                    break;
                }
            }
            prop_assert!(terminal_rewards <= 1);
        }
    }
}
