//! Crosswalk scenario: a straight lane, a crosswalk zone across it and
//! pedestrians walking back and forth through the zone.
//!
//! All geometry defaults are illustrative values, not measurements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::geometry::{Polyline, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub road_length: f64,
    /// Arc length of the crosswalk's near edge.
    pub zone_start: f64,
    pub zone_depth: f64,
    pub zone_half_width: f64,
    pub pedestrian_count: usize,
    pub pedestrian_speed: f64,
    /// Pedestrians patrol from -span to +span across the lane.
    pub pedestrian_half_span: f64,
    pub pedestrian_radius: f64,
    /// Draw each pedestrian's starting point and direction from the episode
    /// seed instead of starting at the patrol ends.
    pub randomize_pedestrians: bool,
    pub v_set: f64,
    pub initial_speed: f64,
    /// Distance short of the crosswalk where the reference profile reaches zero.
    pub stop_margin: f64,
    /// Extra distance beyond `stop_margin` where a stop still earns the bonus.
    pub stop_window: f64,
    /// Deceleration of the reference braking profile, m/s².
    pub a_ref: f64,
    /// Speed below which the ego counts as stopped.
    pub v_stop: f64,
    pub mu: f64,
    /// Ego footprint measured from the center of gravity.
    pub ego_front: f64,
    pub ego_rear: f64,
    pub ego_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road_length: 120.0,
            zone_start: 80.0,
            zone_depth: 4.0,
            zone_half_width: 4.0,
            pedestrian_count: 2,
            pedestrian_speed: 1.4,
            pedestrian_half_span: 6.0,
            pedestrian_radius: 0.4,
            randomize_pedestrians: true,
            v_set: 15.0,
            initial_speed: 15.0,
            stop_margin: 16.0,
            stop_window: 4.0,
            a_ref: 2.0,
            v_stop: 0.1,
            mu: 0.9,
            ego_front: 2.1,
            ego_rear: 2.3,
            ego_width: 1.8,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("road_length", self.road_length),
            ("zone_depth", self.zone_depth),
            ("zone_half_width", self.zone_half_width),
            ("pedestrian_half_span", self.pedestrian_half_span),
            ("pedestrian_radius", self.pedestrian_radius),
            ("v_set", self.v_set),
            ("a_ref", self.a_ref),
            ("v_stop", self.v_stop),
            ("ego_front", self.ego_front),
            ("ego_rear", self.ego_rear),
            ("ego_width", self.ego_width),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(CoreError::config(
                    format!("scenario.{key}"),
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        if !(self.mu > 0.0 && self.mu <= 1.5) {
            return Err(CoreError::config("scenario.mu", "must lie in (0, 1.5]"));
        }
        if !(self.pedestrian_speed >= 0.0) {
            return Err(CoreError::config("scenario.pedestrian_speed", "must be >= 0"));
        }
        if !(self.initial_speed >= 0.0) {
            return Err(CoreError::config("scenario.initial_speed", "must be >= 0"));
        }
        if !(self.stop_margin >= 0.0 && self.stop_window >= 0.0) {
            return Err(CoreError::config("scenario.stop_margin", "must be >= 0"));
        }
        if !(self.zone_start > 0.0 && self.zone_start + self.zone_depth < self.road_length) {
            return Err(CoreError::config(
                "scenario.zone_start",
                "crosswalk must lie on the road",
            ));
        }
        if self.pedestrian_count > u16::MAX as usize {
            return Err(CoreError::config("scenario.pedestrian_count", "too many actors"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Pedestrian,
}

/// Position, heading and speed of an actor as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorSnapshot {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

/// An actor walking back and forth between two patrol points with
/// instantaneous reversal at each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub kind: ActorKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub patrol: ((f64, f64), (f64, f64)),
    along: f64,
    toward_b: bool,
}

impl Actor {
    pub fn pedestrian(
        id: u32,
        patrol: ((f64, f64), (f64, f64)),
        speed: f64,
        along: f64,
        toward_b: bool,
    ) -> Result<Self> {
        let len = patrol_length(&patrol);
        if !(len > 0.0) {
            return Err(CoreError::invalid("patrol endpoints must be distinct"));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(CoreError::invalid("actor speed must be finite and >= 0"));
        }
        let mut actor = Actor {
            id,
            kind: ActorKind::Pedestrian,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed,
            patrol,
            along: along.clamp(0.0, len),
            toward_b,
        };
        actor.place();
        Ok(actor)
    }

    fn place(&mut self) {
        let ((ax, ay), (bx, by)) = self.patrol;
        let len = patrol_length(&self.patrol);
        let t = self.along / len;
        self.x = ax + t * (bx - ax);
        self.y = ay + t * (by - ay);
        self.heading = if self.toward_b {
            (by - ay).atan2(bx - ax)
        } else {
            (ay - by).atan2(ax - bx)
        };
    }

    pub fn advance(&mut self, dt: f64) {
        let len = patrol_length(&self.patrol);
        let mut along = self.along + if self.toward_b { 1.0 } else { -1.0 } * self.speed * dt;
        loop {
            if along > len {
                along = 2.0 * len - along;
                self.toward_b = false;
            } else if along < 0.0 {
                along = -along;
                self.toward_b = true;
            } else {
                break;
            }
        }
        self.along = along;
        self.place();
    }

    pub fn snapshot(&self) -> ActorSnapshot {
        ActorSnapshot {
            id: self.id,
            x: self.x,
            y: self.y,
            heading: self.heading,
            speed: self.speed,
        }
    }
}

fn patrol_length(p: &((f64, f64), (f64, f64))) -> f64 {
    (p.1 .0 - p.0 .0).hypot(p.1 .1 - p.0 .1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub centerline: Polyline,
    pub crosswalk_zone: Rect,
    /// Arc lengths where the centerline enters and leaves the zone.
    pub zone_span: (f64, f64),
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let centerline = Polyline::new(vec![(0.0, 0.0), (config.road_length, 0.0)])?;
        let crosswalk_zone = Rect {
            x_min: config.zone_start,
            x_max: config.zone_start + config.zone_depth,
            y_min: -config.zone_half_width,
            y_max: config.zone_half_width,
        };
        Self::with_geometry(config, centerline, crosswalk_zone)
    }

    pub fn with_geometry(config: ScenarioConfig, centerline: Polyline, crosswalk_zone: Rect) -> Result<Self> {
        let zone_span = centerline
            .span_inside(&crosswalk_zone)
            .ok_or_else(|| CoreError::config("scenario.zone_start", "crosswalk does not cross the lane"))?;
        Ok(Scenario {
            config,
            centerline,
            crosswalk_zone,
            zone_span,
        })
    }

    /// Pedestrians spread evenly across the crosswalk depth, patrolling
    /// perpendicular to the lane. Starting points come from `rng` when
    /// randomization is on.
    pub fn spawn_actors<R: Rng>(&self, rng: &mut R) -> Result<Vec<Actor>> {
        let c = &self.config;
        let n = c.pedestrian_count;
        let mut actors = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.zone_span.0 + (i as f64 + 0.5) * (self.zone_span.1 - self.zone_span.0) / n as f64;
            let (cx, cy) = self.centerline.point_at(s);
            let heading = self.centerline.heading_at(s);
            let (nx, ny) = (-heading.sin(), heading.cos());
            let a = (cx - nx * c.pedestrian_half_span, cy - ny * c.pedestrian_half_span);
            let b = (cx + nx * c.pedestrian_half_span, cy + ny * c.pedestrian_half_span);
            let len = 2.0 * c.pedestrian_half_span;
            let (along, toward_b) = if c.randomize_pedestrians {
                (rng.gen::<f64>() * len, rng.gen::<bool>())
            } else if i % 2 == 0 {
                (0.0, true)
            } else {
                (len, false)
            };
            actors.push(Actor::pedestrian(i as u32 + 1, (a, b), c.pedestrian_speed, along, toward_b)?);
        }
        Ok(actors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reverses_at_patrol_end() {
        let mut a = Actor::pedestrian(1, ((0.0, -6.0), (0.0, 6.0)), 1.4, 11.9, true).unwrap();
        assert!((a.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        a.advance(0.5);
        // 0.1 m to the end, 0.6 m reflected back.
        assert!((a.y - (6.0 - 0.6)).abs() < 1e-12);
        assert!((a.heading + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn identical_endpoints_rejected() {
        assert!(Actor::pedestrian(1, ((1.0, 1.0), (1.0, 1.0)), 1.0, 0.0, true).is_err());
    }

    #[test]
    fn default_scenario_places_pedestrians_in_zone() {
        let sc = Scenario::new(ScenarioConfig::default()).unwrap();
        assert_eq!(sc.zone_span, (80.0, 84.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actors = sc.spawn_actors(&mut rng).unwrap();
        assert_eq!(actors.len(), 2);
        assert_eq!(actors[0].x, 81.0);
        assert_eq!(actors[1].x, 83.0);
    }

    proptest! {
        #[test]
        fn stays_on_patrol_segment(start in 0.0f64..12.0, dir: bool, speed in 0.0f64..5.0, steps in 1usize..400) {
            let mut a = Actor::pedestrian(1, ((2.0, -6.0), (2.0, 6.0)), speed, start, dir).unwrap();
            for _ in 0..steps {
                a.advance(0.05);
                prop_assert!(a.y >= -6.0 - 1e-12 && a.y <= 6.0 + 1e-12);
                prop_assert_eq!(a.x, 2.0);
                prop_assert_eq!(a.speed, speed);
            }
        }
    }
}
