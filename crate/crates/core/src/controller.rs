//! Dynamic-inversion tracking controller.
//!
//! Converts desired flight-path-angle and heading rates into angle-of-attack
//! and bank-angle commands. The required velocity-frame acceleration is
//! turned into an aerodynamic force; the bank angle rotates the lift vector
//! onto that force (bank-to-turn, no side force) and the lift magnitude is
//! inverted through the linear lift polynomial.

use crate::error::{Error, Result};
use crate::vehicle::{
    self, clamp_controls, ControlInput, VehicleParams, VehicleState, POLAR_COS_MIN, SPEED_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredRates {
    /// rad/s
    pub gamma_dot: f64,
    /// rad/s
    pub psi_dot: f64,
}

/// Aerodynamic force demanded in the velocity frame, plus the commands
/// derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroForceCommand {
    /// Along-velocity component; diagnostic only, speed is not commanded.
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub lift_cmd: f64,
    pub sigma_cmd_raw: f64,
    pub alpha_cmd_raw: f64,
    pub saturated: bool,
}

/// Lateral and normal velocity-frame accelerations `(a2, a3)` that realize
/// the desired rates.
pub fn accel_command(
    state: &VehicleState,
    rates: &DesiredRates,
    params: &VehicleParams,
) -> Result<(f64, f64)> {
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
    let re = params.earth_radius;
    let h = state.h;
    let v = state.v;
    let cos_g = state.gamma.cos();
    let a2 = v
        * cos_g
        * (h * rates.psi_dot * cos_phi + re * rates.psi_dot * cos_phi
            - v * cos_g * state.phi.sin() * state.psi.sin())
        / (cos_phi * (re + h));
    let a3 = -v * (re * rates.gamma_dot + rates.gamma_dot * h - v * cos_g) / (re + h);
    Ok((a2, a3))
}

/// Newton's second law with gravity along local down: `f = m (a - g_V)`.
pub fn required_aero_force(
    a2: f64,
    a3: f64,
    state: &VehicleState,
    params: &VehicleParams,
) -> AeroForceCommand {
    let g = vehicle::gravity(state.h, params);
    let m = params.mass;
    let (sin_g, cos_g) = state.gamma.sin_cos();
    // The along-track acceleration is not commanded; report the force that
    // would hold speed constant.
    let f1 = m * g * sin_g;
    let f2 = m * a2;
    let f3 = m * (a3 - g * cos_g);
    AeroForceCommand {
        f1,
        f2,
        f3,
        lift_cmd: f2.hypot(f3),
        sigma_cmd_raw: 0.0,
        alpha_cmd_raw: 0.0,
        saturated: false,
    }
}

/// Fill in the raw and clamped commands for a force demand.
pub fn bank_and_alpha(
    cmd: &AeroForceCommand,
    state: &VehicleState,
    params: &VehicleParams,
) -> (ControlInput, AeroForceCommand) {
    let sigma_raw = cmd.f2.atan2(-cmd.f3);
    let rho = vehicle::density(state.h, params);
    let cl = 2.0 * cmd.lift_cmd / (params.reference_area * rho * state.v * state.v);
    let alpha_raw = ((cl - params.lift[0]) / params.lift[1]).to_radians();
    let raw = ControlInput::new(alpha_raw, sigma_raw);
    let clamped = clamp_controls(&raw, params);
    let out = AeroForceCommand {
        sigma_cmd_raw: sigma_raw,
        alpha_cmd_raw: alpha_raw,
        saturated: clamped != raw,
        ..*cmd
    };
    (clamped, out)
}

pub fn control_from_desired_dynamics(
    state: &VehicleState,
    rates: &DesiredRates,
    params: &VehicleParams,
) -> Result<(ControlInput, AeroForceCommand)> {
    let (a2, a3) = accel_command(state, rates, params)?;
    let force = required_aero_force(a2, a3, state, params);
    Ok(bank_and_alpha(&force, state, params))
}
