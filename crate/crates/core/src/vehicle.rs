//! Point-mass reentry dynamics over a spherical, non-rotating Earth.
//!
//! State is `[h, v, theta, phi, gamma, psi, alpha, sigma]` in SI units and
//! radians. Angle of attack and bank angle follow their commands through
//! first-order lags. Aerodynamic and heating polynomials are evaluated in
//! degrees of angle of attack.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEG: f64 = std::f64::consts::PI / 180.0;

/// Smallest |cos(phi)| accepted before the longitude/heading rates blow up.
pub const POLAR_COS_MIN: f64 = 1e-9;
/// Smallest speed accepted by the dynamics.
pub const SPEED_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Altitude above the reference sphere (m).
    pub h: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Longitude (rad).
    pub theta: f64,
    /// Latitude (rad).
    pub phi: f64,
    /// Vertical flight-path angle (rad).
    pub gamma: f64,
    /// Heading angle measured from north (rad).
    pub psi: f64,
    /// Angle of attack (rad).
    pub alpha: f64,
    /// Bank angle (rad).
    pub sigma: f64,
}

impl VehicleState {
    pub const DIM: usize = 8;

    pub fn from_array(x: [f64; 8]) -> Self {
        Self {
            h: x[0],
            v: x[1],
            theta: x[2],
            phi: x[3],
            gamma: x[4],
            psi: x[5],
            alpha: x[6],
            sigma: x[7],
        }
    }

    pub fn to_array(self) -> [f64; 8] {
        [
            self.h, self.v, self.theta, self.phi, self.gamma, self.psi, self.alpha, self.sigma,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Commanded angle of attack and bank angle (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub alpha_cmd: f64,
    pub sigma_cmd: f64,
}

impl ControlInput {
    pub fn new(alpha_cmd: f64, sigma_cmd: f64) -> Self {
        Self {
            alpha_cmd,
            sigma_cmd,
        }
    }
}

/// Physical constants, aerodynamic model and constraint limits.
///
/// Angles are stored in radians; the on-disk format uses degrees for the
/// limit fields (`*_deg` keys).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleParams {
    pub provenance: String,
    pub earth_radius: f64,
    pub mass: f64,
    pub reference_area: f64,
    pub rho0: f64,
    pub scale_height: f64,
    pub mu: f64,
    /// Lift coefficient `C_L = a0 + a1 * alpha_deg`.
    pub lift: [f64; 2],
    /// Drag coefficient `C_D = b0 + b1 * alpha_deg + b2 * alpha_deg^2`.
    pub drag: [f64; 3],
    /// Heating polynomial in `alpha_deg`, lowest order first.
    pub heating: [f64; 4],
    pub tau_alpha: f64,
    pub tau_sigma: f64,
    pub q_max: f64,
    pub h_min: f64,
    pub v_min: f64,
    pub gamma_abs_max: f64,
    pub alpha_cmd_max: f64,
    pub sigma_cmd_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleFile {
    provenance: String,
    earth_radius: f64,
    mass: f64,
    reference_area: f64,
    rho0: f64,
    scale_height: f64,
    mu: f64,
    lift: [f64; 2],
    drag: [f64; 3],
    heating: [f64; 4],
    tau_alpha: f64,
    tau_sigma: f64,
    q_max: f64,
    h_min: f64,
    v_min: f64,
    gamma_abs_max_deg: f64,
    alpha_cmd_max_deg: f64,
    sigma_cmd_max_deg: f64,
}

impl VehicleParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: VehicleFile =
            toml::from_str(text).map_err(|e| Error::config("vehicle", e.message().to_string()))?;
        let params = Self {
            provenance: file.provenance,
            earth_radius: file.earth_radius,
            mass: file.mass,
            reference_area: file.reference_area,
            rho0: file.rho0,
            scale_height: file.scale_height,
            mu: file.mu,
            lift: file.lift,
            drag: file.drag,
            heating: file.heating,
            tau_alpha: file.tau_alpha,
            tau_sigma: file.tau_sigma,
            q_max: file.q_max,
            h_min: file.h_min,
            v_min: file.v_min,
            gamma_abs_max: file.gamma_abs_max_deg * DEG,
            alpha_cmd_max: file.alpha_cmd_max_deg * DEG,
            sigma_cmd_max: file.sigma_cmd_max_deg * DEG,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field,
                message: format!("{message} (in {})", path.display()),
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("earth_radius", self.earth_radius),
            ("mass", self.mass),
            ("reference_area", self.reference_area),
            ("rho0", self.rho0),
            ("scale_height", self.scale_height),
            ("mu", self.mu),
            ("tau_alpha", self.tau_alpha),
            ("tau_sigma", self.tau_sigma),
            ("q_max", self.q_max),
            ("h_min", self.h_min),
            ("v_min", self.v_min),
            ("gamma_abs_max_deg", self.gamma_abs_max),
            ("alpha_cmd_max_deg", self.alpha_cmd_max),
            ("sigma_cmd_max_deg", self.sigma_cmd_max),
        ];
        for (name, value) in scalars {
            if !value.is_finite() {
                return Err(Error::config(format!("vehicle.{name}"), "must be finite"));
            }
        }
        let coeffs = self
            .lift
            .iter()
            .chain(&self.drag)
            .chain(&self.heating)
            .all(|c| c.is_finite());
        if !coeffs {
            return Err(Error::config(
                "vehicle.lift/drag/heating",
                "polynomial coefficients must be finite",
            ));
        }
        for (name, value) in [
            ("earth_radius", self.earth_radius),
            ("mass", self.mass),
            ("reference_area", self.reference_area),
            ("rho0", self.rho0),
            ("scale_height", self.scale_height),
            ("mu", self.mu),
            ("tau_alpha", self.tau_alpha),
            ("tau_sigma", self.tau_sigma),
            ("q_max", self.q_max),
        ] {
            if value <= 0.0 {
                return Err(Error::config(
                    format!("vehicle.{name}"),
                    "must be strictly positive",
                ));
            }
        }
        if self.lift[1] == 0.0 {
            return Err(Error::config(
                "vehicle.lift",
                "a1 must be non-zero for lift inversion",
            ));
        }
        Ok(())
    }
}

/// Aerodynamic and gravitational quantities at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroOutputs {
    pub lift: f64,
    pub drag: f64,
    pub rho: f64,
    pub g: f64,
    pub cl: f64,
    pub cd: f64,
    pub q: f64,
}

#[inline]
pub fn alpha_hat(alpha: f64) -> f64 {
    alpha.to_degrees()
}

pub fn density(h: f64, params: &VehicleParams) -> f64 {
    params.rho0 * (-h / params.scale_height).exp()
}

pub fn gravity(h: f64, params: &VehicleParams) -> f64 {
    let r = h + params.earth_radius;
    params.mu / (r * r)
}

/// Leading-edge heating rate in BTU/ft^2-s. `rho` in kg/m^3, speed in m/s.
pub fn heating(state: &VehicleState, rho: f64, params: &VehicleParams) -> f64 {
    let a = alpha_hat(state.alpha);
    let [c0, c1, c2, c3] = params.heating;
    let poly = c0 + a * (c1 + a * (c2 + a * c3));
    779.67 * poly * rho.sqrt() * (3.28084e-4 * state.v).powf(3.07)
}

pub fn aero_forces(state: &VehicleState, params: &VehicleParams) -> AeroOutputs {
    let a = alpha_hat(state.alpha);
    let cl = params.lift[0] + params.lift[1] * a;
    let cd = params.drag[0] + a * (params.drag[1] + a * params.drag[2]);
    let rho = density(state.h, params);
    let dyn_area = 0.5 * params.reference_area * rho * state.v * state.v;
    AeroOutputs {
        lift: cl * dyn_area,
        drag: cd * dyn_area,
        rho,
        g: gravity(state.h, params),
        cl,
        cd,
        q: heating(state, rho, params),
    }
}

/// Time derivative of the state under a constant command.
pub fn derivatives(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<[f64; 8]> {
    let cos_phi = state.phi.cos();
    if cos_phi.abs() < POLAR_COS_MIN {
        return Err(Error::Domain(format!(
            "polar singularity at latitude {} rad",
            state.phi
        )));
    }
    if state.v < SPEED_MIN {
        return Err(Error::Domain(format!("speed {} m/s too small", state.v)));
    }

    let aero = aero_forces(state, params);
    let m = params.mass;
    let v = state.v;
    let r = state.h + params.earth_radius;
    let (sin_g, cos_g) = state.gamma.sin_cos();
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    let (sin_s, cos_s) = state.sigma.sin_cos();

    Ok([
        v * sin_g,
        -aero.drag / m - aero.g * sin_g,
        v / r * cos_g * sin_psi / cos_phi,
        v / r * cos_g * cos_psi,
        aero.lift * cos_s / (m * v) + (v / r - aero.g / v) * cos_g,
        aero.lift * sin_s / (m * v * cos_g) + v / r * cos_g * sin_psi * state.phi.sin() / cos_phi,
        (control.alpha_cmd - state.alpha) / params.tau_alpha,
        (control.sigma_cmd - state.sigma) / params.tau_sigma,
    ])
}

fn axpy(x: &[f64; 8], k: &[f64; 8], scale: f64) -> VehicleState {
    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = x[i] + scale * k[i];
    }
    VehicleState::from_array(out)
}

/// One classical fourth-order Runge-Kutta step with the command held constant.
pub fn rk4_step(
    state: &VehicleState,
    control: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let x = state.to_array();
    let k1 = derivatives(state, control, params)?;
    let k2 = derivatives(&axpy(&x, &k1, 0.5 * dt), control, params)?;
    let k3 = derivatives(&axpy(&x, &k2, 0.5 * dt), control, params)?;
    let k4 = derivatives(&axpy(&x, &k3, dt), control, params)?;
    let mut next = [0.0; 8];
    for i in 0..8 {
        next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = VehicleState::from_array(next);
    if !next.is_finite() {
        return Err(Error::non_finite("rk4 step"));
    }
    Ok(next)
}

pub fn clamp_controls(raw: &ControlInput, params: &VehicleParams) -> ControlInput {
    ControlInput {
        alpha_cmd: raw
            .alpha_cmd
            .clamp(-params.alpha_cmd_max, params.alpha_cmd_max),
        sigma_cmd: raw
            .sigma_cmd
            .clamp(-params.sigma_cmd_max, params.sigma_cmd_max),
    }
}

/// Path constraint that ended an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathConstraint {
    Altitude,
    Speed,
    FlightPathAngle,
    Heating,
}

impl std::fmt::Display for PathConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PathConstraint::Altitude => "altitude",
            PathConstraint::Speed => "speed",
            PathConstraint::FlightPathAngle => "flight-path-angle",
            PathConstraint::Heating => "heating",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violated(PathConstraint),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

/// Boundary values are feasible; NaN fields count as violations.
pub fn check_path_constraints(state: &VehicleState, q: f64, params: &VehicleParams) -> Verdict {
    if !(state.h >= params.h_min) {
        Verdict::Violated(PathConstraint::Altitude)
    } else if !(state.v >= params.v_min) {
        Verdict::Violated(PathConstraint::Speed)
    } else if !(state.gamma.abs() <= params.gamma_abs_max) {
        Verdict::Violated(PathConstraint::FlightPathAngle)
    } else if !(q <= params.q_max) {
        Verdict::Violated(PathConstraint::Heating)
    } else {
        Verdict::Ok
    }
}

/// Specific mechanical energy `v^2/2 - mu/r`.
pub fn specific_energy(state: &VehicleState, params: &VehicleParams) -> f64 {
    0.5 * state.v * state.v - params.mu / (state.h + params.earth_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::shuttle;
    use approx::assert_relative_eq;

    fn nominal() -> VehicleState {
        VehicleState {
            h: 79248.0,
            v: 7802.0,
            theta: 0.0,
            phi: 0.0,
            gamma: -DEG,
            psi: 90.0 * DEG,
            alpha: 0.0,
            sigma: 0.0,
        }
    }

    #[test]
    fn level_flight_has_no_climb_rate() {
        let mut p = shuttle();
        p.lift = [0.0, 1e-9];
        p.drag = [0.0; 3];
        let s = VehicleState {
            gamma: 0.0,
            ..nominal()
        };
        let d = derivatives(&s, &ControlInput::new(0.0, 0.0), &p).unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn actuators_at_command_are_stationary() {
        let p = shuttle();
        let s = VehicleState {
            alpha: 0.3,
            sigma: -0.7,
            ..nominal()
        };
        let d = derivatives(&s, &ControlInput::new(0.3, -0.7), &p).unwrap();
        assert_eq!(d[6], 0.0);
        assert_eq!(d[7], 0.0);
    }

    #[test]
    fn nominal_derivative_matches_scalar_reevaluation() {
        let p = shuttle();
        let s = VehicleState {
            alpha: 17.0 * DEG,
            sigma: -40.0 * DEG,
            phi: 0.2,
            ..nominal()
        };
        let u = ControlInput::new(20.0 * DEG, -60.0 * DEG);
        let d = derivatives(&s, &u, &p).unwrap();

        // Independent evaluation, one expression per row.
        let ad = s.alpha * 180.0 / std::f64::consts::PI;
        let rho = p.rho0 * f64::exp(-s.h / p.scale_height);
        let r = s.h + p.earth_radius;
        let g = p.mu / (r * r);
        let l = 0.5 * (p.lift[0] + p.lift[1] * ad) * p.reference_area * rho * s.v.powi(2);
        let dr = 0.5
            * (p.drag[0] + p.drag[1] * ad + p.drag[2] * ad.powi(2))
            * p.reference_area
            * rho
            * s.v.powi(2);
        let expected = [
            s.v * s.gamma.sin(),
            -dr / p.mass - g * s.gamma.sin(),
            s.v / r * s.gamma.cos() * s.psi.sin() / s.phi.cos(),
            s.v / r * s.gamma.cos() * s.psi.cos(),
            l * s.sigma.cos() / (p.mass * s.v) + (s.v / r - g / s.v) * s.gamma.cos(),
            l * s.sigma.sin() / (p.mass * s.v * s.gamma.cos())
                + s.v / r * s.gamma.cos() * s.psi.sin() * s.phi.sin() / s.phi.cos(),
            (u.alpha_cmd - s.alpha) / p.tau_alpha,
            (u.sigma_cmd - s.sigma) / p.tau_sigma,
        ];
        for (a, b) in d.iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn derivatives_reject_pole_and_zero_speed() {
        let p = shuttle();
        let u = ControlInput::new(0.0, 0.0);
        let pole = VehicleState {
            phi: std::f64::consts::FRAC_PI_2,
            ..nominal()
        };
        assert!(matches!(derivatives(&pole, &u, &p), Err(Error::Domain(_))));
        let stopped = VehicleState {
            v: 0.0,
            ..nominal()
        };
        assert!(matches!(derivatives(&stopped, &u, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn derivatives_are_bit_reproducible() {
        let p = shuttle();
        let u = ControlInput::new(0.2, 0.1);
        let a = derivatives(&nominal(), &u, &p).unwrap();
        let b = derivatives(&nominal(), &u, &p).unwrap();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn aero_polynomials_at_zero_alpha() {
        let p = shuttle();
        let out = aero_forces(&nominal(), &p);
        assert_eq!(out.cl, p.lift[0]);
        assert_eq!(out.cd, p.drag[0]);
        let sea = VehicleState {
            h: 0.0,
            ..nominal()
        };
        assert_eq!(aero_forces(&sea, &p).rho, p.rho0);
    }

    #[test]
    fn aero_forces_scale_with_speed_squared() {
        let p = shuttle();
        let s = VehicleState {
            alpha: 0.4,
            ..nominal()
        };
        let fast = VehicleState { v: 2.0 * s.v, ..s };
        let a = aero_forces(&s, &p);
        let b = aero_forces(&fast, &p);
        assert_relative_eq!(b.lift, 4.0 * a.lift, max_relative = 1e-14);
        assert_relative_eq!(b.drag, 4.0 * a.drag, max_relative = 1e-14);
    }

    #[test]
    fn heating_unit_collapse_and_power_law() {
        let mut p = shuttle();
        p.heating = [1.0, 0.0, 0.0, 0.0];
        let s = VehicleState {
            v: 1.0 / 3.28084e-4,
            alpha: 0.0,
            ..nominal()
        };
        assert_relative_eq!(heating(&s, 1.0, &p), 779.67, max_relative = 1e-12);

        let p = shuttle();
        let s = VehicleState {
            alpha: 0.5,
            ..nominal()
        };
        let fast = VehicleState { v: 2.0 * s.v, ..s };
        let ratio = heating(&fast, 3e-5, &p) / heating(&s, 3e-5, &p);
        assert_relative_eq!(ratio, 2f64.powf(3.07), max_relative = 1e-12);
    }

    #[test]
    fn clamp_examples() {
        let p = shuttle();
        let c = clamp_controls(&ControlInput::new(50.0 * DEG, 0.0), &p);
        assert_relative_eq!(c.alpha_cmd, 45.0 * DEG);
        assert_eq!(c.sigma_cmd, 0.0);
        let c = clamp_controls(&ControlInput::new(0.0, -95.0 * DEG), &p);
        assert_relative_eq!(c.sigma_cmd, -89.0 * DEG);
        let raw = ControlInput::new(10.0 * DEG, 20.0 * DEG);
        assert_eq!(clamp_controls(&raw, &p), raw);
    }

    #[test]
    fn constraint_boundaries_are_feasible() {
        let p = shuttle();
        let edge = VehicleState {
            h: p.h_min,
            v: p.v_min,
            gamma: p.gamma_abs_max,
            ..nominal()
        };
        assert!(check_path_constraints(&edge, p.q_max, &p).is_ok());
        let low = VehicleState {
            h: 19999.9,
            ..edge
        };
        assert_eq!(
            check_path_constraints(&low, 10.0, &p),
            Verdict::Violated(PathConstraint::Altitude)
        );
        let steep = VehicleState {
            gamma: -20.5 * DEG,
            ..nominal()
        };
        assert_eq!(
            check_path_constraints(&steep, 10.0, &p),
            Verdict::Violated(PathConstraint::FlightPathAngle)
        );
        assert_eq!(
            check_path_constraints(&nominal(), 80.0 + 1e-9, &p),
            Verdict::Violated(PathConstraint::Heating)
        );
    }

    #[test]
    fn actuator_lag_settles_exponentially() {
        let p = shuttle();
        let mut s = VehicleState {
            alpha: 0.0,
            ..nominal()
        };
        let u = ControlInput::new(0.5, 0.0);
        let dt = 0.05;
        let mut prev_gap = 0.5;
        for _ in 0..100 {
            s = rk4_step(&s, &u, dt, &p).unwrap();
            let gap = (u.alpha_cmd - s.alpha).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 0.007 * 0.5);
    }

    #[test]
    fn rk4_small_step_approaches_identity() {
        let p = shuttle();
        let s = nominal();
        let next = rk4_step(&s, &ControlInput::new(0.0, 0.0), 1e-12, &p).unwrap();
        for (a, b) in next.to_array().iter().zip(s.to_array()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(rk4_step(&s, &ControlInput::new(0.0, 0.0), 0.0, &p).is_err());
    }

    #[test]
    fn loader_rejects_missing_and_non_finite_keys() {
        let text = crate::testing::shuttle_toml();
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("mass"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(VehicleParams::from_toml_str(&missing).is_err());
        let nan = text.replace("q_max = 80.0", "q_max = nan");
        assert!(VehicleParams::from_toml_str(&nan).is_err());
        let zero_a1 = text.replace("0.029244", "0.0");
        assert!(VehicleParams::from_toml_str(&zero_a1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clamp_is_idempotent_projection(a in -10.0f64..10.0, s in -10.0f64..10.0) {
                let p = shuttle();
                let once = clamp_controls(&ControlInput::new(a, s), &p);
                prop_assert_eq!(clamp_controls(&once, &p), once);
                prop_assert!(once.alpha_cmd.abs() <= p.alpha_cmd_max);
                prop_assert!(once.sigma_cmd.abs() <= p.sigma_cmd_max);
            }
        }
    }
}
