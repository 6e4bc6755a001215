//! Reference braking profile and the per-step reward.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::safety::BLUE_S;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_j: f64,
    pub p_collision: f64,
    pub b_stop: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 0.5,
            w_j: 0.05,
            p_collision: 10.0,
            b_stop: 20.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("w_v", self.w_v), ("w_j", self.w_j), ("b_stop", self.b_stop)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::config(format!("reward.{key}"), "must be finite and >= 0"));
            }
        }
        if !(self.p_collision.is_finite() && self.p_collision > 2.0 * self.w_v) {
            return Err(CoreError::config("reward.p_collision", "must exceed 2 * w_v"));
        }
        Ok(())
    }
}

/// Constant-deceleration profile reaching zero `stop_margin` short of the
/// zone. `distance` is measured from the front bumper to the zone entry.
pub fn braking_profile(distance: f64, stop_margin: f64, a_ref: f64, v_set: f64) -> f64 {
    (2.0 * a_ref * (distance - stop_margin).max(0.0)).sqrt().min(v_set)
}

/// Pedestrians threaten the crossing when any of them could reach the zone
/// within the outermost warning horizon.
pub fn zone_threatened(ttz_actors: impl IntoIterator<Item = f64>) -> bool {
    ttz_actors.into_iter().any(|t| t < BLUE_S)
}

pub fn reference_speed(
    distance: f64,
    past_zone: bool,
    threatened: bool,
    stop_margin: f64,
    a_ref: f64,
    v_set: f64,
) -> f64 {
    if past_zone || !threatened {
        v_set
    } else {
        braking_profile(distance, stop_margin, a_ref, v_set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub v: f64,
    pub v_ref: f64,
    pub v_set: f64,
    pub action_changed: bool,
    pub collision: bool,
    pub compliant_stop: bool,
}

pub fn reward(ctx: &RewardContext, w: &RewardWeights) -> f64 {
    let mut r = w.w_v * (1.0 - (ctx.v - ctx.v_ref).abs() / ctx.v_set);
    if ctx.action_changed {
        r -= w.w_j;
    }
    if ctx.collision {
        r -= w.p_collision;
    }
    if ctx.compliant_stop {
        r += w.b_stop;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(v: f64, v_ref: f64) -> RewardContext {
        RewardContext {
            v,
            v_ref,
            v_set: 15.0,
            action_changed: false,
            collision: false,
            compliant_stop: false,
        }
    }

    #[test]
    fn profile_values() {
        assert_eq!(braking_profile(3.0, 3.0, 2.5, 15.0), 0.0);
        assert_eq!(braking_profile(48.0, 3.0, 2.5, 15.0), 15.0);
        assert_eq!(braking_profile(1.0, 3.0, 2.5, 15.0), 0.0);
        assert_eq!(reference_speed(20.0, false, false, 3.0, 2.5, 15.0), 15.0);
        assert_eq!(reference_speed(20.0, true, true, 3.0, 2.5, 15.0), 15.0);
    }

    #[test]
    fn perfect_tracking() {
        assert_eq!(reward(&ctx(7.0, 7.0), &RewardWeights::default()), 0.5);
    }

    #[test]
    fn half_reference_speed() {
        // 0.5 * (1 - 4/15) - 0.05
        let mut c = ctx(4.0, 8.0);
        c.action_changed = true;
        let r = reward(&c, &RewardWeights::default());
        assert!((r - 0.3166666666666667).abs() < 1e-15, "{r}");
    }

    #[test]
    fn collision_dominates() {
        let w = RewardWeights::default();
        let mut c = ctx(7.0, 7.0);
        c.collision = true;
        let r = reward(&c, &w);
        assert!(r <= -w.p_collision + w.w_v);
        assert!(r < 0.0);
    }

    #[test]
    fn weights_validated() {
        let w = RewardWeights {
            p_collision: 0.9,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
