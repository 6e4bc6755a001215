//! Pure-pursuit lateral controller.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::geometry::{wrap_angle, Polyline};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub lookahead_min: f64,
    /// Lookahead growth with speed, s.
    pub lookahead_gain: f64,
    pub delta_max: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            lookahead_min: 4.0,
            lookahead_gain: 0.5,
            delta_max: 0.5,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead_min > 0.0) {
            return Err(CoreError::config("tracker.lookahead_min", "must be > 0"));
        }
        if !(self.lookahead_gain >= 0.0) {
            return Err(CoreError::config("tracker.lookahead_gain", "must be >= 0"));
        }
        if !(self.delta_max > 0.0 && self.delta_max < std::f64::consts::FRAC_PI_2) {
            return Err(CoreError::config("tracker.delta_max", "must lie in (0, pi/2)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteerCommand {
    pub delta: f64,
    pub end_of_path: bool,
}

/// Steering from the rear-axle point toward a lookahead target on `path`.
pub fn lateral_track(
    ego: &VehicleState,
    path: &Polyline,
    vehicle: &VehicleParams,
    params: &TrackerParams,
) -> SteerCommand {
    let (sin_p, cos_p) = ego.psi.sin_cos();
    let rx = ego.x - vehicle.l_r * cos_p;
    let ry = ego.y - vehicle.l_r * sin_p;

    let pts = path.points();
    let (lx, ly) = pts[pts.len() - 1];
    let (px, py) = pts[pts.len() - 2];
    let beyond = (ego.x - lx) * (lx - px) + (ego.y - ly) * (ly - py) > 0.0;
    if beyond {
        return SteerCommand {
            delta: 0.0,
            end_of_path: true,
        };
    }

    let l = params.lookahead_min.max(params.lookahead_gain * ego.v);
    let proj = path.project(rx, ry);
    let (tx, ty) = path.point_at(proj.s + l);
    let (dx, dy) = (tx - rx, ty - ry);
    let dist = dx.hypot(dy);
    if dist < 1e-9 {
        return SteerCommand {
            delta: 0.0,
            end_of_path: false,
        };
    }
    let eta = wrap_angle(dy.atan2(dx) - ego.psi);
    let delta = (2.0 * vehicle.wheelbase() * eta.sin() / dist).atan();
    SteerCommand {
        delta: delta.clamp(-params.delta_max, params.delta_max),
        end_of_path: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_on_line_is_straight() {
        let path = Polyline::new(vec![(0.0, 0.0), (100.0, 0.0)]).unwrap();
        let ego = VehicleState {
            x: 10.0,
            v: 10.0,
            ..Default::default()
        };
        let cmd = lateral_track(&ego, &path, &VehicleParams::default(), &TrackerParams::default());
        assert_eq!(cmd.delta, 0.0);
        assert!(!cmd.end_of_path);
    }

    #[test]
    fn target_to_the_left_saturates() {
        let path = Polyline::new(vec![(0.0, 0.0), (0.0, 100.0)]).unwrap();
        // Facing +x while the path runs along +y from the rear axle.
        let ego = VehicleState {
            x: VehicleParams::default().l_r,
            ..Default::default()
        };
        let p = TrackerParams::default();
        let cmd = lateral_track(&ego, &path, &VehicleParams::default(), &p);
        assert_eq!(cmd.delta, p.delta_max);
    }

    #[test]
    fn circle_oracle() {
        // On a circle of radius R pure pursuit reduces to atan(wheelbase / R).
        let r = 40.0;
        let n = 20_000;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let th = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n as f64;
                (r * th.cos(), r * th.sin())
            })
            .collect();
        let path = Polyline::new(pts).unwrap();
        let vp = VehicleParams::default();
        // Rear axle at the bottom of the circle, heading +x (counter-clockwise).
        let ego = VehicleState {
            x: vp.l_r,
            y: -r,
            v: 10.0,
            ..Default::default()
        };
        let cmd = lateral_track(&ego, &path, &vp, &TrackerParams::default());
        let oracle = (vp.wheelbase() / r).atan();
        assert!((cmd.delta - oracle).abs() < 1e-6, "{} vs {}", cmd.delta, oracle);
    }

    #[test]
    fn beyond_final_waypoint() {
        let path = Polyline::new(vec![(0.0, 0.0), (100.0, 0.0)]).unwrap();
        let ego = VehicleState {
            x: 101.0,
            v: 3.0,
            ..Default::default()
        };
        let cmd = lateral_track(&ego, &path, &VehicleParams::default(), &TrackerParams::default());
        assert!(cmd.end_of_path);
        assert_eq!(cmd.delta, 0.0);
    }
}
