//! Discrete action set. Each action is a longitudinal command, optionally
//! combined with a steering offset added to the path tracker's output.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::plant::Actuation;
use crate::tire::vertical_loads;
use crate::vehicle::{road_load, VehicleParams, VehicleState, GRAVITY};
use crate::wheel::WheelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Longitudinal {
    HardBrake,
    SoftBrake,
    Coast,
    SoftThrottle,
    HoldSetSpeed,
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 5] = [
        Longitudinal::HardBrake,
        Longitudinal::SoftBrake,
        Longitudinal::Coast,
        Longitudinal::SoftThrottle,
        Longitudinal::HoldSetSpeed,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    pub hard_brake_decel: f64,
    pub soft_brake_decel: f64,
    /// Acceleration added on top of the road-load feed-forward.
    pub throttle_accel: f64,
    /// Proportional gain of the hold action, 1/s.
    pub hold_gain: f64,
    pub hold_accel_max: f64,
    /// Extra steering offsets in rad. Empty keeps the action set
    /// longitudinal-only.
    pub steer_offsets: Vec<f64>,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            hard_brake_decel: 6.5,
            soft_brake_decel: 2.5,
            throttle_accel: 1.0,
            hold_gain: 0.5,
            hold_accel_max: 2.0,
            steer_offsets: Vec::new(),
        }
    }
}

impl ActionConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("hard_brake_decel", self.hard_brake_decel),
            ("soft_brake_decel", self.soft_brake_decel),
            ("throttle_accel", self.throttle_accel),
            ("hold_gain", self.hold_gain),
            ("hold_accel_max", self.hold_accel_max),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::config(format!("actions.{key}"), "must be finite and >= 0"));
            }
        }
        if self.steer_offsets.iter().any(|o| !o.is_finite() || *o == 0.0) {
            return Err(CoreError::config(
                "actions.steer_offsets",
                "offsets must be finite and nonzero",
            ));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        Longitudinal::ALL.len() * (1 + self.steer_offsets.len())
    }

    pub fn decode(&self, action: usize) -> Result<(Longitudinal, f64)> {
        if action >= self.count() {
            return Err(CoreError::invalid(format!(
                "action {action} outside the action set of {}",
                self.count()
            )));
        }
        let n = Longitudinal::ALL.len();
        let lon = Longitudinal::ALL[action % n];
        let offset = match action / n {
            0 => 0.0,
            k => self.steer_offsets[k - 1],
        };
        Ok((lon, offset))
    }
}

/// Brake torques for a target deceleration, split by static axle load.
fn brake_split(force: f64, vehicle: &VehicleParams, wheel: &WheelParams) -> (f64, f64) {
    let (f_zf, f_zr) = vertical_loads(vehicle);
    let w = vehicle.m * GRAVITY;
    (force * f_zf / w * wheel.radius_f, force * f_zr / w * wheel.radius_r)
}

/// Actuation held for one agent period. `steer` is the path tracker output.
pub fn actuation(
    action: usize,
    steer: f64,
    ego: &VehicleState,
    v_set: f64,
    cfg: &ActionConfig,
    vehicle: &VehicleParams,
    wheel: &WheelParams,
) -> Result<Actuation> {
    let (lon, offset) = cfg.decode(action)?;
    let m = vehicle.m;
    let load = road_load(ego, vehicle);
    let mut act = Actuation {
        delta_f: steer + offset,
        ..Default::default()
    };
    let longitudinal_force = match lon {
        Longitudinal::HardBrake => -m * cfg.hard_brake_decel,
        Longitudinal::SoftBrake => -m * cfg.soft_brake_decel,
        Longitudinal::Coast => 0.0,
        Longitudinal::SoftThrottle => load + m * cfg.throttle_accel,
        Longitudinal::HoldSetSpeed => (load + m * cfg.hold_gain * (v_set - ego.v))
            .clamp(-m * cfg.soft_brake_decel, m * cfg.hold_accel_max),
    };
    if longitudinal_force >= 0.0 {
        act.drive_r = longitudinal_force * wheel.radius_r;
    } else {
        let (bf, br) = brake_split(-longitudinal_force, vehicle, wheel);
        act.brake_f = bf;
        act.brake_r = br;
    }
    Ok(act)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_with_offsets() {
        let cfg = ActionConfig {
            steer_offsets: vec![-0.05, 0.05],
            ..Default::default()
        };
        assert_eq!(cfg.count(), 15);
        assert_eq!(cfg.decode(0).unwrap(), (Longitudinal::HardBrake, 0.0));
        assert_eq!(cfg.decode(7).unwrap(), (Longitudinal::Coast, -0.05));
        assert_eq!(cfg.decode(14).unwrap(), (Longitudinal::HoldSetSpeed, 0.05));
        assert!(cfg.decode(15).is_err());
    }

    #[test]
    fn brake_torque_matches_deceleration() {
        let vp = VehicleParams::default();
        let wp = WheelParams::default();
        let ego = VehicleState {
            v: 10.0,
            ..Default::default()
        };
        let a = actuation(0, 0.0, &ego, 15.0, &ActionConfig::default(), &vp, &wp).unwrap();
        let total = a.brake_f / wp.radius_f + a.brake_r / wp.radius_r;
        assert!((total - 1500.0 * 6.5).abs() < 1e-9);
        // Front axle carries l_r / wheelbase of the weight.
        assert!((a.brake_f / wp.radius_f / total - 1.5 / 2.7).abs() < 1e-12);
        assert_eq!((a.drive_f, a.drive_r), (0.0, 0.0));
    }

    #[test]
    fn hold_at_set_speed_balances_road_load() {
        let vp = VehicleParams::default();
        let wp = WheelParams::default();
        let ego = VehicleState {
            v: 15.0,
            ..Default::default()
        };
        let a = actuation(4, 0.01, &ego, 15.0, &ActionConfig::default(), &vp, &wp).unwrap();
        assert!((a.drive_r / wp.radius_r - road_load(&ego, &vp)).abs() < 1e-9);
        assert_eq!(a.delta_f, 0.01);
    }
}
