//! Wheel spin dynamics written in deviated angular velocity Δω, the offset
//! from the rolling-synchronous speed V_x / R, plus the slip ratio that
//! feeds the tire model.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::vehicle::{AxleKinematics, TireForces};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WheelParams {
    pub radius_f: f64,
    pub radius_r: f64,
    pub inertia_f: f64,
    pub inertia_r: f64,
    /// Floor of the slip denominator, m/s. Also bounds the stiffness of the
    /// wheel/tire loop at low speed, which has to stay inside the RK4
    /// stability region at the default 1 ms step.
    pub v_slip_eps: f64,
    /// Angular speed below which brake torque fades linearly to zero, rad/s.
    pub brake_fade_omega: f64,
}

impl Default for WheelParams {
    fn default() -> Self {
        Self {
            radius_f: 0.3,
            radius_r: 0.3,
            inertia_f: 1.2,
            inertia_r: 1.2,
            v_slip_eps: 4.0,
            brake_fade_omega: 2.0,
        }
    }
}

impl WheelParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("radius_f", self.radius_f),
            ("radius_r", self.radius_r),
            ("inertia_f", self.inertia_f),
            ("inertia_r", self.inertia_r),
            ("v_slip_eps", self.v_slip_eps),
            ("brake_fade_omega", self.brake_fade_omega),
        ];
        for (key, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(CoreError::config(
                    format!("wheel.{key}"),
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        Ok(())
    }
}

/// Δω starts at zero: wheels begin synchronized with the ground.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WheelState {
    pub d_omega_f: f64,
    pub d_omega_r: f64,
    pub omega_f: f64,
    pub omega_r: f64,
}

impl WheelState {
    /// Recomputes the absolute speeds from Δω and the axle kinematics.
    pub fn synced(mut self, kin: &AxleKinematics, params: &WheelParams) -> Self {
        let (f, r) = absolute_omega(&self, kin, params);
        self.omega_f = f;
        self.omega_r = r;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxleTorques {
    pub m_f: f64,
    pub m_r: f64,
}

pub fn wheel_derivative(
    _ws: &WheelState,
    torques: AxleTorques,
    forces: &TireForces,
    params: &WheelParams,
) -> (f64, f64) {
    (
        (torques.m_f - forces.f_xf * params.radius_f) / params.inertia_f,
        (torques.m_r - forces.f_xr * params.radius_r) / params.inertia_r,
    )
}

pub fn absolute_omega(ws: &WheelState, kin: &AxleKinematics, params: &WheelParams) -> (f64, f64) {
    (
        ws.d_omega_f + kin.v_xf / params.radius_f,
        ws.d_omega_r + kin.v_xr / params.radius_r,
    )
}

fn axle_slip(d_omega: f64, omega: f64, v_x: f64, radius: f64, floor: f64) -> f64 {
    let denom = (omega * radius).abs().max(v_x.abs()).max(floor);
    (d_omega * radius / denom).clamp(-1.0, 1.0)
}

/// Longitudinal slip per axle: positive when the wheel overspins the
/// ground (traction), negative when it lags (braking).
pub fn slip_ratio(ws: &WheelState, kin: &AxleKinematics, params: &WheelParams) -> (f64, f64) {
    let (omega_f, omega_r) = absolute_omega(ws, kin, params);
    (
        axle_slip(ws.d_omega_f, omega_f, kin.v_xf, params.radius_f, params.v_slip_eps),
        axle_slip(ws.d_omega_r, omega_r, kin.v_xr, params.radius_r, params.v_slip_eps),
    )
}

/// Net axle torque from a drive torque and a brake torque magnitude. The
/// brake opposes wheel rotation and fades out linearly inside
/// `±fade_omega`, so it can stop a wheel but never spin it backwards.
pub fn net_axle_torque(drive: f64, brake: f64, omega: f64, fade_omega: f64) -> f64 {
    let brake = brake.max(0.0);
    let engagement = (omega / fade_omega).clamp(-1.0, 1.0);
    drive - brake * engagement
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kin(v_x: f64) -> AxleKinematics {
        AxleKinematics {
            v_xf: v_x,
            v_xr: v_x,
            v_f: v_x,
            v_r: v_x,
            ..Default::default()
        }
    }

    #[test]
    fn freewheel_and_equilibrium() {
        let p = WheelParams::default();
        let ws = WheelState::default();
        let (df, _) = wheel_derivative(&ws, AxleTorques::default(), &TireForces::default(), &p);
        assert_eq!(df, 0.0);

        let forces = TireForces {
            f_xf: 400.0,
            ..Default::default()
        };
        let torques = AxleTorques {
            m_f: 400.0 * p.radius_f,
            m_r: 0.0,
        };
        let (df, _) = wheel_derivative(&ws, torques, &forces, &p);
        assert_eq!(df, 0.0);
    }

    #[test]
    fn wheel_derivative_value() {
        let p = WheelParams {
            radius_f: 0.3,
            inertia_f: 1.2,
            ..Default::default()
        };
        let forces = TireForces {
            f_xf: 200.0,
            ..Default::default()
        };
        let (df, _) = wheel_derivative(
            &WheelState::default(),
            AxleTorques { m_f: 100.0, m_r: 0.0 },
            &forces,
            &p,
        );
        assert_relative_eq!(df, (100.0 - 60.0) / 1.2, max_relative = 1e-15);
    }

    #[test]
    fn absolute_speed_from_deviation() {
        let p = WheelParams::default();
        let ws = WheelState::default();
        assert_relative_eq!(absolute_omega(&ws, &kin(15.0), &p).0, 50.0, max_relative = 1e-15);
        let ws = WheelState {
            d_omega_f: 2.0,
            ..Default::default()
        };
        assert_eq!(absolute_omega(&ws, &kin(0.0), &p).0, 2.0);
    }

    #[test]
    fn slip_cases() {
        let p = WheelParams::default();
        let ws = WheelState::default();
        assert_eq!(slip_ratio(&ws, &kin(23.0), &p), (0.0, 0.0));
        assert_eq!(slip_ratio(&ws, &kin(0.0), &p), (0.0, 0.0));

        // ωR = 11, V_x = 10, so ΔωR = 1.
        let ws = WheelState {
            d_omega_f: 1.0 / p.radius_f,
            d_omega_r: -1.0 / p.radius_r,
            ..Default::default()
        };
        let (sf, sr) = slip_ratio(&ws, &kin(10.0), &p);
        assert_relative_eq!(sf, 1.0 / 11.0, max_relative = 1e-14);
        // Braking side: ωR = 9, V_x = 10.
        assert_relative_eq!(sr, -0.1, max_relative = 1e-14);
    }

    #[test]
    fn brake_never_reverses_rotation() {
        assert_eq!(net_axle_torque(0.0, 1000.0, 0.0, 2.0), 0.0);
        assert_eq!(net_axle_torque(0.0, 1000.0, 10.0, 2.0), -1000.0);
        assert_eq!(net_axle_torque(0.0, 1000.0, -10.0, 2.0), 1000.0);
        assert_eq!(net_axle_torque(0.0, 1000.0, 1.0, 2.0), -500.0);
        assert_eq!(net_axle_torque(50.0, 0.0, 1.0, 2.0), 50.0);
    }

    proptest! {
        #[test]
        fn slip_bounded(d in -500.0f64..500.0, vx in -40.0f64..40.0) {
            let p = WheelParams::default();
            let ws = WheelState { d_omega_f: d, d_omega_r: -d, ..Default::default() };
            let (sf, sr) = slip_ratio(&ws, &kin(vx), &p);
            prop_assert!((-1.0..=1.0).contains(&sf));
            prop_assert!((-1.0..=1.0).contains(&sr));
        }

        #[test]
        fn slip_continuous_in_deviation(d in -5.0f64..5.0, vx in 5.0f64..40.0) {
            let p = WheelParams::default();
            let h = 1e-9;
            let a = slip_ratio(&WheelState { d_omega_f: d, ..Default::default() }, &kin(vx), &p).0;
            let b = slip_ratio(&WheelState { d_omega_f: d + h, ..Default::default() }, &kin(vx), &p).0;
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
