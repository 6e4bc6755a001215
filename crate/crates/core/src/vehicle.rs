//! Extended single-track (bicycle) model: body-frame force resultants,
//! state derivatives in (β, V, r), axle kinematics and pose post-processing.
//!
//! Sign conventions: x forward, y left, yaw counter-clockwise positive.
//! Tire slip angles are steer minus axle velocity angle, so a positive
//! slip angle produces a positive lateral force.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const GRAVITY: f64 = 9.81;

/// Chassis parameters. Defaults are placeholder values for a mid-size
/// passenger car, not measured data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub m: f64,
    pub l_f: f64,
    pub l_r: f64,
    pub i_z: f64,
    pub drag_coeff: f64,
    pub roll_coeff: f64,
    pub v_eps: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 1500.0,
            l_f: 1.2,
            l_r: 1.5,
            i_z: 2500.0,
            drag_coeff: 0.38,
            roll_coeff: 0.01,
            v_eps: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("m", self.m),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("i_z", self.i_z),
            ("v_eps", self.v_eps),
        ];
        for (key, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(CoreError::config(
                    format!("vehicle.{key}"),
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        if !(self.drag_coeff >= 0.0 && self.roll_coeff >= 0.0) {
            return Err(CoreError::config(
                "vehicle.drag_coeff",
                "road-load coefficients must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub beta: f64,
    pub v: f64,
    pub r: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl VehicleState {
    pub fn is_finite(&self) -> bool {
        [self.beta, self.v, self.r, self.x, self.y, self.psi]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta_f: f64,
    pub delta_r: f64,
    pub m_f: f64,
    pub m_r: f64,
    pub m_zd: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TireForces {
    pub f_xf: f64,
    pub f_xr: f64,
    pub f_yf: f64,
    pub f_yr: f64,
}

impl TireForces {
    fn as_array(&self) -> [f64; 4] {
        [self.f_xf, self.f_xr, self.f_yf, self.f_yr]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxleKinematics {
    pub v_f: f64,
    pub v_r: f64,
    pub beta_f: f64,
    pub beta_r: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
    pub v_xf: f64,
    pub v_xr: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResultantLoads {
    pub sum_fx: f64,
    pub sum_fy: f64,
    pub sum_mz: f64,
    pub f_load: f64,
}

/// Time derivative of the dynamic states (β, V, r).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DynamicRates {
    pub beta_dot: f64,
    pub v_dot: f64,
    pub r_dot: f64,
}

/// Time derivative of the pose (X, Y, ψ).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PoseRates {
    pub x_dot: f64,
    pub y_dot: f64,
    pub psi_dot: f64,
}

fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::invalid(format!("{name} contains a non-finite value")))
    }
}

/// Net body-frame forces and yaw moment from the four tire forces, the
/// longitudinal road load and the yaw disturbance moment.
pub fn resultant_loads(
    forces: &TireForces,
    u: &ControlInput,
    f_load: f64,
    params: &VehicleParams,
) -> Result<ResultantLoads> {
    ensure_finite("tire forces", &forces.as_array())?;
    ensure_finite(
        "control input",
        &[u.delta_f, u.delta_r, u.m_f, u.m_r, u.m_zd, f_load],
    )?;
    let (sf, cf) = u.delta_f.sin_cos();
    let (sr, cr) = u.delta_r.sin_cos();
    let TireForces {
        f_xf,
        f_xr,
        f_yf,
        f_yr,
    } = *forces;

    let sum_fx = cf * f_xf + cr * f_xr - sf * f_yf - sr * f_yr - f_load;
    let sum_fy = sf * f_xf + sr * f_xr + cf * f_yf + cr * f_yr;
    let sum_mz = params.l_f * sf * f_xf - params.l_r * sr * f_xr + params.l_f * cf * f_yf
        - params.l_r * cr * f_yr
        + u.m_zd;

    Ok(ResultantLoads {
        sum_fx,
        sum_fy,
        sum_mz,
        f_load,
    })
}

/// Aerodynamic drag plus rolling resistance.
pub fn road_load(state: &VehicleState, params: &VehicleParams) -> f64 {
    params.drag_coeff * state.v * state.v + params.roll_coeff * params.m * GRAVITY
}

/// Equations of motion in (β, V, r) with the tire-force matrix A and the
/// load matrix B written out directly. The β row divides by mV, so the
/// caller must keep V at or above `v_eps`.
pub fn state_derivative(
    state: &VehicleState,
    forces: &TireForces,
    u: &ControlInput,
    f_load: f64,
    params: &VehicleParams,
) -> Result<DynamicRates> {
    if !(state.v >= params.v_eps) {
        return Err(CoreError::Singularity {
            v: state.v,
            v_eps: params.v_eps,
        });
    }
    ensure_finite("tire forces", &forces.as_array())?;
    ensure_finite("control input", &[u.delta_f, u.delta_r, u.m_zd, f_load])?;

    let m = params.m;
    let mv = m * state.v;
    let beta = state.beta;
    let (s_fb, c_fb) = (u.delta_f - beta).sin_cos();
    let (s_rb, c_rb) = (u.delta_r - beta).sin_cos();
    let (s_b, c_b) = beta.sin_cos();
    let (s_f, c_f) = u.delta_f.sin_cos();
    let (s_r, c_r) = u.delta_r.sin_cos();
    let TireForces {
        f_xf,
        f_xr,
        f_yf,
        f_yr,
    } = *forces;

    // B·[-F_load, 0, M_zd]; the middle column multiplies zero.
    let beta_dot = (s_fb * f_xf + s_rb * f_xr + c_fb * f_yf + c_rb * f_yr) / mv
        + (-s_b / mv) * (-f_load)
        - state.r;
    let v_dot = (c_fb * f_xf + c_rb * f_xr - s_fb * f_yf - s_rb * f_yr) / m + (c_b / m) * (-f_load);
    let r_dot = (params.l_f * s_f * f_xf - params.l_r * s_r * f_xr + params.l_f * c_f * f_yf
        - params.l_r * c_r * f_yr)
        / params.i_z
        + u.m_zd / params.i_z;

    Ok(DynamicRates {
        beta_dot,
        v_dot,
        r_dot,
    })
}

/// Low-speed fallback used below `v_eps`: the side-slip angle is frozen,
/// yaw responds only to the disturbance moment and speed follows the
/// longitudinal force balance without going negative.
pub fn low_speed_derivative(
    state: &VehicleState,
    forces: &TireForces,
    u: &ControlInput,
    f_load: f64,
    params: &VehicleParams,
) -> Result<DynamicRates> {
    let loads = resultant_loads(forces, u, f_load, params)?;
    let mut v_dot = loads.sum_fx / params.m;
    if state.v <= 0.0 && v_dot < 0.0 {
        v_dot = 0.0;
    }
    Ok(DynamicRates {
        beta_dot: 0.0,
        v_dot,
        r_dot: u.m_zd / params.i_z,
    })
}

/// Velocity angles and magnitudes at each axle, tire slip angles and the
/// axle velocity components along each wheel's rolling direction.
pub fn axle_kinematics(
    state: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
) -> Result<AxleKinematics> {
    if !(state.v >= params.v_eps) {
        return Err(CoreError::Singularity {
            v: state.v,
            v_eps: params.v_eps,
        });
    }
    let (sb, cb) = state.beta.sin_cos();
    let vx = state.v * cb;
    let vy = state.v * sb;
    let vy_f = vy + params.l_f * state.r;
    let vy_r = vy - params.l_r * state.r;

    let beta_f = vy_f.atan2(vx);
    let beta_r = vy_r.atan2(vx);
    let v_f = vx.hypot(vy_f);
    let v_r = vx.hypot(vy_r);
    let alpha_f = u.delta_f - beta_f;
    let alpha_r = u.delta_r - beta_r;

    Ok(AxleKinematics {
        v_f,
        v_r,
        beta_f,
        beta_r,
        alpha_f,
        alpha_r,
        v_xf: v_f * alpha_f.cos(),
        v_xr: v_r * alpha_r.cos(),
    })
}

/// Kinematics used in low-speed mode: no lateral slip, axles roll with
/// the vehicle speed projected on each steered wheel.
pub fn low_speed_kinematics(state: &VehicleState, u: &ControlInput) -> AxleKinematics {
    let v = state.v.max(0.0);
    AxleKinematics {
        v_f: v,
        v_r: v,
        beta_f: u.delta_f,
        beta_r: u.delta_r,
        alpha_f: 0.0,
        alpha_r: 0.0,
        v_xf: v,
        v_xr: v,
    }
}

pub fn pose_rates(state: &VehicleState) -> PoseRates {
    let (s, c) = (state.psi + state.beta).sin_cos();
    PoseRates {
        x_dot: state.v * c,
        y_dot: state.v * s,
        psi_dot: state.r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn force_balance_at_zero_steer() {
        let forces = TireForces {
            f_xf: 500.0,
            f_xr: 500.0,
            ..Default::default()
        };
        let loads = resultant_loads(&forces, &ControlInput::default(), 1000.0, &params()).unwrap();
        assert_eq!((loads.sum_fx, loads.sum_fy, loads.sum_mz), (0.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_axles_cancel_yaw() {
        let p = VehicleParams {
            l_f: 1.3,
            l_r: 1.3,
            ..params()
        };
        let forces = TireForces {
            f_yf: 800.0,
            f_yr: 800.0,
            ..Default::default()
        };
        let loads = resultant_loads(&forces, &ControlInput::default(), 0.0, &p).unwrap();
        assert_eq!(loads.sum_fy, 1600.0);
        assert_eq!(loads.sum_mz, 0.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let forces = TireForces {
            f_xf: f64::NAN,
            ..Default::default()
        };
        assert!(matches!(
            resultant_loads(&forces, &ControlInput::default(), 0.0, &params()),
            Err(CoreError::InvalidInput(_))
        ));
    }

    #[test]
    fn road_load_terms() {
        let s = VehicleState {
            v: 10.0,
            ..Default::default()
        };
        let none = VehicleParams {
            drag_coeff: 0.0,
            roll_coeff: 0.0,
            ..params()
        };
        assert_eq!(road_load(&s, &none), 0.0);
        let drag = VehicleParams {
            drag_coeff: 0.4,
            roll_coeff: 0.0,
            ..params()
        };
        assert_relative_eq!(road_load(&s, &drag), 40.0, max_relative = 1e-15);
        let both = VehicleParams {
            drag_coeff: 0.4,
            roll_coeff: 0.01,
            m: 1500.0,
            ..params()
        };
        let s15 = VehicleState { v: 15.0, ..s };
        assert_relative_eq!(road_load(&s15, &both), 90.0 + 147.15, max_relative = 1e-14);
    }

    #[test]
    fn straight_cruise_is_equilibrium() {
        let s = VehicleState {
            v: 12.0,
            ..Default::default()
        };
        let forces = TireForces {
            f_xf: 100.0,
            f_xr: 137.0,
            ..Default::default()
        };
        let d = state_derivative(&s, &forces, &ControlInput::default(), 237.0, &params()).unwrap();
        assert_eq!((d.beta_dot, d.r_dot), (0.0, 0.0));
        assert!(d.v_dot.abs() < 1e-15);
    }

    #[test]
    fn pure_lateral_force_substitution() {
        let p = params();
        let f = 900.0;
        let s = VehicleState {
            v: 8.0,
            r: 0.2,
            ..Default::default()
        };
        let forces = TireForces {
            f_yf: f,
            f_yr: f,
            ..Default::default()
        };
        let d = state_derivative(&s, &forces, &ControlInput::default(), 0.0, &p).unwrap();
        assert_relative_eq!(d.beta_dot, 2.0 * f / (p.m * s.v) - s.r, max_relative = 1e-14);
        assert_eq!(d.v_dot, 0.0);
        assert_relative_eq!(d.r_dot, (p.l_f - p.l_r) * f / p.i_z, max_relative = 1e-14);
    }

    #[test]
    fn singular_speed_rejected() {
        let s = VehicleState {
            v: 0.1,
            ..Default::default()
        };
        let err = state_derivative(&s, &TireForces::default(), &ControlInput::default(), 0.0, &params());
        assert!(matches!(err, Err(CoreError::Singularity { .. })));
        assert!(axle_kinematics(&s, &ControlInput::default(), &params()).is_err());
    }

    #[test]
    fn axle_kinematics_pure_translation() {
        let s = VehicleState {
            v: 10.0,
            ..Default::default()
        };
        let k = axle_kinematics(&s, &ControlInput::default(), &params()).unwrap();
        assert_eq!((k.alpha_f, k.alpha_r), (0.0, 0.0));
        assert_eq!((k.v_xf, k.v_xr), (10.0, 10.0));

        let u = ControlInput {
            delta_f: 0.05,
            ..Default::default()
        };
        let k = axle_kinematics(&s, &u, &params()).unwrap();
        assert_eq!(k.alpha_f, 0.05);
        assert_eq!(k.alpha_r, 0.0);
    }

    #[test]
    fn axle_kinematics_with_yaw_rate() {
        let p = VehicleParams {
            l_f: 1.2,
            ..params()
        };
        let s = VehicleState {
            v: 10.0,
            beta: 0.02,
            r: 0.1,
            ..Default::default()
        };
        let k = axle_kinematics(&s, &ControlInput::default(), &p).unwrap();
        // 10 sin(0.02) = 0.199986666..., 10 cos(0.02) = 9.998000066...
        let vx: f64 = 9.998_000_066_665_778;
        let vy: f64 = 0.199_986_666_933_330_8;
        assert_relative_eq!(k.beta_f, ((vy + 0.12) / vx).atan(), max_relative = 1e-13);
        assert_relative_eq!(k.beta_r, ((vy - 0.15) / vx).atan(), max_relative = 1e-12);
        assert_relative_eq!(k.alpha_f, -k.beta_f);
        assert_relative_eq!(k.v_f, (vx * vx + (vy + 0.12).powi(2)).sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn pose_rate_rotations() {
        let s = VehicleState {
            v: 10.0,
            ..Default::default()
        };
        let p = pose_rates(&s);
        assert_eq!((p.x_dot, p.y_dot, p.psi_dot), (10.0, 0.0, 0.0));

        let s = VehicleState {
            v: 10.0,
            psi: std::f64::consts::FRAC_PI_2,
            r: 0.3,
            ..Default::default()
        };
        let p = pose_rates(&s);
        assert!(p.x_dot.abs() < 1e-14);
        assert_relative_eq!(p.y_dot, 10.0);
        assert_eq!(p.psi_dot, 0.3);

        let s = VehicleState {
            v: 5.0,
            psi: 0.3,
            beta: 0.1,
            r: -0.2,
            ..Default::default()
        };
        let p = pose_rates(&s);
        assert_relative_eq!(p.x_dot, 5.0 * 0.4f64.cos(), max_relative = 1e-15);
        assert_relative_eq!(p.y_dot, 5.0 * 0.4f64.sin(), max_relative = 1e-15);
        assert_eq!(p.psi_dot, -0.2);
    }

    #[test]
    fn low_speed_mode_never_pushes_backwards() {
        let s = VehicleState::default();
        let forces = TireForces {
            f_xf: -300.0,
            ..Default::default()
        };
        let d = low_speed_derivative(&s, &forces, &ControlInput::default(), 100.0, &params()).unwrap();
        assert_eq!(d.v_dot, 0.0);
        assert_eq!(d.beta_dot, 0.0);
    }
}
