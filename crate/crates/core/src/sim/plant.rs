//! The assembled vehicle: chassis, wheels and tires integrated together.
//!
//! Each derivative evaluation runs axle kinematics → slip ratio → tire
//! forces → chassis and wheel derivatives → pose rates.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::integrator::{integrate, IntegratorKind};
use crate::tire::{dugoff_forces, vertical_loads, SlipState, TireParams};
use crate::vehicle::{
    axle_kinematics, low_speed_derivative, low_speed_kinematics, pose_rates, road_load,
    state_derivative, AxleKinematics, ControlInput, TireForces, VehicleParams, VehicleState,
};
use crate::wheel::{net_axle_torque, slip_ratio, wheel_derivative, AxleTorques, WheelParams, WheelState};

/// Actuator command held constant over a control period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub delta_f: f64,
    pub delta_r: f64,
    pub drive_f: f64,
    pub drive_r: f64,
    /// Brake torque magnitudes, N·m, applied against wheel rotation.
    pub brake_f: f64,
    pub brake_r: f64,
    pub m_zd: f64,
}

impl Actuation {
    pub fn is_finite(&self) -> bool {
        [
            self.delta_f,
            self.delta_r,
            self.drive_f,
            self.drive_r,
            self.brake_f,
            self.brake_r,
            self.m_zd,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub vehicle: VehicleState,
    pub wheels: WheelState,
}

impl PlantState {
    pub fn at_speed(x: f64, y: f64, psi: f64, v: f64) -> Self {
        PlantState {
            vehicle: VehicleState {
                v,
                x,
                y,
                psi,
                ..Default::default()
            },
            wheels: WheelState::default(),
        }
    }

    fn to_vec(self) -> [f64; 8] {
        let s = self.vehicle;
        [
            s.beta,
            s.v,
            s.r,
            s.x,
            s.y,
            s.psi,
            self.wheels.d_omega_f,
            self.wheels.d_omega_r,
        ]
    }

    fn from_vec(x: &[f64; 8]) -> Self {
        PlantState {
            vehicle: VehicleState {
                beta: x[0],
                v: x[1],
                r: x[2],
                x: x[3],
                y: x[4],
                psi: x[5],
            },
            wheels: WheelState {
                d_omega_f: x[6],
                d_omega_r: x[7],
                ..Default::default()
            },
        }
    }
}

/// Everything evaluated at one point of the state space; useful for logging
/// and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSnapshot {
    pub kinematics: AxleKinematics,
    pub slip: (f64, f64),
    pub forces: TireForces,
    pub low_speed: bool,
}

fn control_input(act: &Actuation) -> ControlInput {
    ControlInput {
        delta_f: act.delta_f,
        delta_r: act.delta_r,
        m_f: act.drive_f,
        m_r: act.drive_r,
        m_zd: act.m_zd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub vehicle: VehicleParams,
    pub tire: TireParams,
    pub wheel: WheelParams,
    pub mu: f64,
}

impl Plant {
    pub fn new(vehicle: VehicleParams, tire: TireParams, wheel: WheelParams, mu: f64) -> Self {
        Plant {
            vehicle,
            tire,
            wheel,
            mu,
        }
    }

    pub fn snapshot(&self, state: &PlantState, act: &Actuation) -> Result<PlantSnapshot> {
        let u = control_input(act);
        let low_speed = state.vehicle.v < self.vehicle.v_eps;
        let kinematics = if low_speed {
            low_speed_kinematics(&state.vehicle, &u)
        } else {
            axle_kinematics(&state.vehicle, &u, &self.vehicle)?
        };
        let slip = slip_ratio(&state.wheels, &kinematics, &self.wheel);
        let (f_zf, f_zr) = vertical_loads(&self.vehicle);
        let front = dugoff_forces(
            &SlipState {
                s: slip.0,
                alpha: kinematics.alpha_f,
                f_z: f_zf,
                mu: self.mu,
            },
            &self.tire,
        )?;
        let rear = dugoff_forces(
            &SlipState {
                s: slip.1,
                alpha: kinematics.alpha_r,
                f_z: f_zr,
                mu: self.mu,
            },
            &self.tire,
        )?;
        Ok(PlantSnapshot {
            kinematics,
            slip,
            forces: TireForces {
                f_xf: front.f_x,
                f_xr: rear.f_x,
                f_yf: front.f_y,
                f_yr: rear.f_y,
            },
            low_speed,
        })
    }

    fn derivative(&self, x: &[f64; 8], act: &Actuation) -> Result<[f64; 8]> {
        let state = PlantState::from_vec(x);
        let snap = self.snapshot(&state, act)?;
        let u = control_input(act);
        let f_load = road_load(&state.vehicle, &self.vehicle);

        let rates = if snap.low_speed {
            low_speed_derivative(&state.vehicle, &snap.forces, &u, f_load, &self.vehicle)?
        } else {
            state_derivative(&state.vehicle, &snap.forces, &u, f_load, &self.vehicle)?
        };
        let pose = pose_rates(&state.vehicle);

        let wheels = state.wheels.synced(&snap.kinematics, &self.wheel);
        let torques = AxleTorques {
            m_f: net_axle_torque(act.drive_f, act.brake_f, wheels.omega_f, self.wheel.brake_fade_omega),
            m_r: net_axle_torque(act.drive_r, act.brake_r, wheels.omega_r, self.wheel.brake_fade_omega),
        };
        let (dwf, dwr) = wheel_derivative(&wheels, torques, &snap.forces, &self.wheel);

        Ok([
            rates.beta_dot,
            rates.v_dot,
            rates.r_dot,
            pose.x_dot,
            pose.y_dot,
            pose.psi_dot,
            dwf,
            dwr,
        ])
    }

    /// Advances one fixed step. Speed is clamped at zero afterwards and the
    /// absolute wheel speeds are refreshed.
    pub fn advance(
        &self,
        state: &PlantState,
        act: &Actuation,
        dt: f64,
        kind: IntegratorKind,
        t: f64,
    ) -> Result<PlantState> {
        if !act.is_finite() {
            return Err(CoreError::invalid("actuation contains a non-finite value"));
        }
        let x0 = state.to_vec();
        let x1 = integrate(kind, &x0, dt, |x| self.derivative(x, act)).map_err(|e| {
            CoreError::SimulationFault {
                t,
                reason: e.to_string(),
                last_valid: Box::new(state.vehicle),
            }
        })?;
        let mut next = PlantState::from_vec(&x1);
        if next.vehicle.v < 0.0 {
            next.vehicle.v = 0.0;
        }
        if !next.vehicle.is_finite() || !next.wheels.d_omega_f.is_finite() || !next.wheels.d_omega_r.is_finite() {
            return Err(CoreError::SimulationFault {
                t,
                reason: "integrator produced a non-finite state".into(),
                last_valid: Box::new(state.vehicle),
            });
        }
        let snap = self.snapshot(&next, act)?;
        next.wheels = next.wheels.synced(&snap.kinematics, &self.wheel);
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> Plant {
        Plant::new(
            VehicleParams::default(),
            TireParams::default(),
            WheelParams::default(),
            0.9,
        )
    }

    #[test]
    fn rigid_body_conserves_speed() {
        let mut p = plant();
        p.vehicle.drag_coeff = 0.0;
        p.vehicle.roll_coeff = 0.0;
        let mut s = PlantState::at_speed(0.0, 0.0, 0.0, 13.0);
        for k in 0..10_000 {
            s = p
                .advance(&s, &Actuation::default(), 1e-3, IntegratorKind::Rk4, k as f64 * 1e-3)
                .unwrap();
        }
        assert!((s.vehicle.v - 13.0).abs() <= 1e-9);
        assert_eq!((s.vehicle.beta, s.vehicle.r), (0.0, 0.0));
        assert!((s.vehicle.x - 130.0).abs() < 1e-8);
    }

    #[test]
    fn undriven_wheels_stay_synchronized() {
        let p = plant();
        let mut s = PlantState::at_speed(0.0, 0.0, 0.0, 15.0);
        let mut worst: f64 = 0.0;
        for k in 0..10_000 {
            s = p
                .advance(&s, &Actuation::default(), 1e-3, IntegratorKind::Rk4, k as f64 * 1e-3)
                .unwrap();
            let snap = p.snapshot(&s, &Actuation::default()).unwrap();
            worst = worst.max(snap.slip.0.abs()).max(snap.slip.1.abs());
        }
        assert!(worst <= 1e-6, "slip drifted to {worst}");
        // Road load alone decelerates the car.
        assert!(s.vehicle.v < 15.0 && s.vehicle.v > 12.0);
    }

    #[test]
    fn hard_braking_stops_without_reversal() {
        let p = plant();
        let brake = 0.5 * 1500.0 * 6.5 * 0.3;
        let act = Actuation {
            brake_f: brake,
            brake_r: brake,
            ..Default::default()
        };
        let mut s = PlantState::at_speed(0.0, 0.0, 0.0, 15.0);
        let mut prev_v = s.vehicle.v;
        let mut stop_time = None;
        for k in 0..8_000 {
            s = p.advance(&s, &act, 1e-3, IntegratorKind::Rk4, k as f64 * 1e-3).unwrap();
            assert!(s.vehicle.v >= 0.0);
            assert!(s.vehicle.v <= prev_v + 1e-9, "speed rose at step {k}");
            prev_v = s.vehicle.v;
            if stop_time.is_none() && s.vehicle.v == 0.0 {
                stop_time = Some(k);
            }
        }
        let stop = stop_time.expect("vehicle never stopped");
        assert!(stop < 4_000, "took {stop} ms to stop");
        assert_eq!(s.vehicle.v, 0.0);
    }
}
