//! Time-to-zone (TTZ) metrics and the four-level warning band.

use serde::{Deserialize, Serialize};

use crate::sim::scenario::{ActorSnapshot, Scenario};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Clear,
    Blue,
    Orange,
    Red,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Clear => "clear",
            Band::Blue => "blue",
            Band::Orange => "orange",
            Band::Red => "red",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        Some(match s {
            "clear" => Band::Clear,
            "blue" => Band::Blue,
            "orange" => Band::Orange,
            "red" => Band::Red,
            _ => return None,
        })
    }
}

pub const RED_S: f64 = 2.0;
pub const ORANGE_S: f64 = 4.0;
pub const BLUE_S: f64 = 6.0;

/// Worst band that both times fall under.
pub fn classify(ttz_vehicle: f64, ttz_actor: f64) -> Band {
    let worst = ttz_vehicle.max(ttz_actor);
    if worst < RED_S {
        Band::Red
    } else if worst < ORANGE_S {
        Band::Orange
    } else if worst < BLUE_S {
        Band::Blue
    } else {
        Band::Clear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorSafety {
    pub id: u32,
    pub ttz_vehicle: f64,
    pub ttz_actor: f64,
    pub band: Band,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub actors: Vec<ActorSafety>,
}

impl SafetyMetrics {
    pub fn worst_band(&self) -> Band {
        self.actors.iter().map(|a| a.band).max().unwrap_or(Band::Clear)
    }
}

/// Ego position relative to the crosswalk, measured along the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneRelation {
    /// Front bumper to zone entry; negative once the bumper is inside.
    pub distance: f64,
    /// Rear bumper has left the zone.
    pub past: bool,
}

pub fn zone_relation(ego: &VehicleState, scenario: &Scenario) -> ZoneRelation {
    let s = scenario.centerline.project(ego.x, ego.y).s;
    let c = &scenario.config;
    ZoneRelation {
        distance: scenario.zone_span.0 - (s + c.ego_front),
        past: s - c.ego_rear > scenario.zone_span.1,
    }
}

pub fn ttz_vehicle(rel: &ZoneRelation, v: f64, v_eps: f64) -> f64 {
    if rel.past {
        f64::INFINITY
    } else if rel.distance <= 0.0 {
        0.0
    } else if v <= 0.0 {
        f64::INFINITY
    } else {
        rel.distance / v.max(v_eps)
    }
}

pub fn ttz_actor(actor: &ActorSnapshot, scenario: &Scenario, speed_eps: f64) -> f64 {
    let d = scenario.crosswalk_zone.distance(actor.x, actor.y);
    if d == 0.0 {
        0.0
    } else if actor.speed <= 0.0 {
        f64::INFINITY
    } else {
        d / actor.speed.max(speed_eps)
    }
}

pub fn compute_ttz(ego: &VehicleState, actors: &[ActorSnapshot], scenario: &Scenario, v_eps: f64) -> SafetyMetrics {
    let tv = ttz_vehicle(&zone_relation(ego, scenario), ego.v, v_eps);
    SafetyMetrics {
        actors: actors
            .iter()
            .map(|a| {
                let ta = ttz_actor(a, scenario, v_eps);
                ActorSafety {
                    id: a.id,
                    ttz_vehicle: tv,
                    ttz_actor: ta,
                    band: classify(tv, ta),
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::ScenarioConfig;

    fn scenario() -> Scenario {
        Scenario::new(ScenarioConfig::default()).unwrap()
    }

    fn ped(x: f64, y: f64, speed: f64) -> ActorSnapshot {
        ActorSnapshot {
            id: 1,
            x,
            y,
            heading: 0.0,
            speed,
        }
    }

    #[test]
    fn boundary_matrix() {
        let values = [1.99, 2.0, 2.01, 3.99, 4.0, 4.01, 5.99, 6.0, 6.01];
        for &a in &values {
            for &b in &values {
                let expected = if a < 2.0 && b < 2.0 {
                    Band::Red
                } else if a < 4.0 && b < 4.0 {
                    Band::Orange
                } else if a < 6.0 && b < 6.0 {
                    Band::Blue
                } else {
                    Band::Clear
                };
                assert_eq!(classify(a, b), expected, "({a}, {b})");
            }
        }
        assert_eq!(classify(f64::INFINITY, 0.0), Band::Clear);
    }

    #[test]
    fn ego_twenty_metres_at_ten() {
        let sc = scenario();
        let ego = VehicleState {
            x: 80.0 - 20.0 - sc.config.ego_front,
            v: 10.0,
            ..Default::default()
        };
        let m = compute_ttz(&ego, &[ped(82.0, 9.6, 1.4)], &sc, 0.5);
        assert!((m.actors[0].ttz_vehicle - 2.0).abs() < 1e-12);
        assert!((m.actors[0].ttz_actor - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_pedestrian_is_clear() {
        let sc = scenario();
        let ego = VehicleState {
            x: 70.0,
            v: 10.0,
            ..Default::default()
        };
        let m = compute_ttz(&ego, &[ped(82.0, 7.0, 0.0)], &sc, 0.5);
        assert_eq!(m.actors[0].ttz_actor, f64::INFINITY);
        assert_eq!(m.actors[0].band, Band::Clear);
    }

    #[test]
    fn blue_example() {
        // Pedestrian 5.6 m out at 1.4 m/s, ego 30 m out at 10 m/s.
        let sc = scenario();
        let ego = VehicleState {
            x: 80.0 - 30.0 - sc.config.ego_front,
            v: 10.0,
            ..Default::default()
        };
        let m = compute_ttz(&ego, &[ped(82.0, -9.6, 1.4)], &sc, 0.5);
        let a = m.actors[0];
        assert!((a.ttz_vehicle - 3.0).abs() < 1e-12);
        assert!((a.ttz_actor - 4.0).abs() < 1e-12);
        assert_eq!(a.band, Band::Blue);
    }

    #[test]
    fn stopped_or_past_is_infinite() {
        let sc = scenario();
        let stopped = VehicleState {
            x: 60.0,
            ..Default::default()
        };
        assert_eq!(ttz_vehicle(&zone_relation(&stopped, &sc), 0.0, 0.5), f64::INFINITY);
        let past = VehicleState {
            x: 90.0,
            v: 5.0,
            ..Default::default()
        };
        assert_eq!(ttz_vehicle(&zone_relation(&past, &sc), 5.0, 0.5), f64::INFINITY);
        let inside = VehicleState {
            x: 79.0,
            v: 5.0,
            ..Default::default()
        };
        assert_eq!(ttz_vehicle(&zone_relation(&inside, &sc), 5.0, 0.5), 0.0);
    }

    #[test]
    fn band_names_round_trip() {
        for b in [Band::Clear, Band::Blue, Band::Orange, Band::Red] {
            assert_eq!(Band::parse(b.as_str()), Some(b));
        }
    }
}
