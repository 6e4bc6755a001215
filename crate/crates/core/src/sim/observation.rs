//! Agent observation: the occupancy grid plus a fusion vector of ego,
//! path and obstacle features. Every fusion feature is divided by a fixed
//! scale and clamped to [-1, 1].
//!
//! Fusion layout, for K waypoints and N actors:
//!
//! | slots        | content                                               |
//! |--------------|-------------------------------------------------------|
//! | 0..5         | v, beta, r, heading error, lateral offset             |
//! | 5..5+2K      | (forward, left) of each waypoint in the ego frame     |
//! | next 5N      | per actor: distance, bearing, speed, ttz_vehicle, ttz_actor |
//! | last 2       | distance to the zone, reference speed                 |
//!
//! TTZ features map `t` to `min(t, ttz_scale) / ttz_scale`, so infinity is 1.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::geometry::wrap_angle;
use crate::sim::grid::OccupancyGrid;
use crate::sim::safety::SafetyMetrics;
use crate::sim::scenario::{ActorSnapshot, Scenario};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationScales {
    pub waypoint_count: usize,
    pub waypoint_spacing: f64,
    pub speed: f64,
    pub beta: f64,
    pub yaw_rate: f64,
    pub lateral: f64,
    pub waypoint: f64,
    pub distance: f64,
    pub actor_speed: f64,
    pub ttz: f64,
}

impl Default for ObservationScales {
    fn default() -> Self {
        Self {
            waypoint_count: 5,
            waypoint_spacing: 5.0,
            speed: 20.0,
            beta: 0.5,
            yaw_rate: 1.0,
            lateral: 5.0,
            waypoint: 50.0,
            distance: 100.0,
            actor_speed: 5.0,
            ttz: 10.0,
        }
    }
}

impl ObservationScales {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("waypoint_spacing", self.waypoint_spacing),
            ("speed", self.speed),
            ("beta", self.beta),
            ("yaw_rate", self.yaw_rate),
            ("lateral", self.lateral),
            ("waypoint", self.waypoint),
            ("distance", self.distance),
            ("actor_speed", self.actor_speed),
            ("ttz", self.ttz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::config(format!("observation.{key}"), "must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn fusion_len(&self, actors: usize) -> usize {
        5 + 2 * self.waypoint_count + 5 * actors + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub grid: OccupancyGrid,
    pub ego: [f64; 5],
    pub waypoints: Vec<f64>,
    pub obstacles: Vec<f64>,
    pub zone: [f64; 2],
}

impl AgentObservation {
    pub fn fusion(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(5 + self.waypoints.len() + self.obstacles.len() + 2);
        out.extend_from_slice(&self.ego);
        out.extend_from_slice(&self.waypoints);
        out.extend_from_slice(&self.obstacles);
        out.extend_from_slice(&self.zone);
        out
    }
}

fn norm(v: f64, scale: f64) -> f64 {
    (v / scale).clamp(-1.0, 1.0)
}

fn norm_ttz(t: f64, scale: f64) -> f64 {
    t.min(scale) / scale
}

#[allow(clippy::too_many_arguments)]
pub fn observe(
    ego: &VehicleState,
    actors: &[ActorSnapshot],
    grid: OccupancyGrid,
    metrics: &SafetyMetrics,
    zone_distance: f64,
    v_ref: f64,
    scenario: &Scenario,
    scales: &ObservationScales,
) -> AgentObservation {
    let proj = scenario.centerline.project(ego.x, ego.y);
    let (sin_h, cos_h) = ego.psi.sin_cos();
    let to_ego = |x: f64, y: f64| {
        let (dx, dy) = (x - ego.x, y - ego.y);
        (dx * cos_h + dy * sin_h, -dx * sin_h + dy * cos_h)
    };

    let mut waypoints = Vec::with_capacity(2 * scales.waypoint_count);
    for i in 0..scales.waypoint_count {
        let (px, py) = scenario
            .centerline
            .point_at(proj.s + (i + 1) as f64 * scales.waypoint_spacing);
        let (f, l) = to_ego(px, py);
        waypoints.push(norm(f, scales.waypoint));
        waypoints.push(norm(l, scales.waypoint));
    }

    let mut obstacles = Vec::with_capacity(5 * actors.len());
    for (a, m) in actors.iter().zip(&metrics.actors) {
        let (f, l) = to_ego(a.x, a.y);
        obstacles.push(norm(f.hypot(l), scales.distance));
        obstacles.push(l.atan2(f) / std::f64::consts::PI);
        obstacles.push(norm(a.speed, scales.actor_speed));
        obstacles.push(norm_ttz(m.ttz_vehicle, scales.ttz));
        obstacles.push(norm_ttz(m.ttz_actor, scales.ttz));
    }

    AgentObservation {
        grid,
        ego: [
            norm(ego.v, scales.speed),
            norm(ego.beta, scales.beta),
            norm(ego.r, scales.yaw_rate),
            wrap_angle(ego.psi - proj.heading) / std::f64::consts::PI,
            norm(proj.lateral, scales.lateral),
        ],
        waypoints,
        obstacles,
        zone: [norm(zone_distance, scales.distance), norm(v_ref, scales.speed)],
    }
}
