//! Closed-loop episode stepping.
//!
//! [`Task`] holds everything that is a pure function of the observed state
//! (actuation, safety assessment, observation, reward, termination), so a
//! remote controller that only sees poses and actor lists computes exactly
//! what the in-process [`Env`] computes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::actions::{actuation, ActionConfig};
use crate::sim::grid::{build_grid, GridSpec};
use crate::sim::integrator::IntegratorKind;
use crate::sim::observation::{observe, AgentObservation, ObservationScales};
use crate::sim::plant::{Actuation, Plant, PlantState};
use crate::sim::reward::{reference_speed, reward, zone_threatened, RewardContext, RewardWeights};
use crate::sim::safety::{compute_ttz, zone_relation, SafetyMetrics, ZoneRelation};
use crate::sim::scenario::{Actor, ActorSnapshot, Scenario, ScenarioConfig};
use crate::sim::tracker::{lateral_track, TrackerParams};
use crate::tire::TireParams;
use crate::vehicle::{VehicleParams, VehicleState};
use crate::wheel::WheelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_dynamics: f64,
    pub dt_agent: f64,
    pub duration_max: f64,
    pub seed: u64,
    pub integrator: IntegratorKind,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_dynamics: 0.001,
            dt_agent: 0.05,
            duration_max: 30.0,
            seed: 7,
            integrator: IntegratorKind::Rk4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_dynamics > 0.0 && self.dt_dynamics.is_finite()) {
            return Err(CoreError::config("sim.dt_dynamics", "must be finite and > 0"));
        }
        if !(self.dt_agent > 0.0 && self.dt_agent.is_finite()) {
            return Err(CoreError::config("sim.dt_agent", "must be finite and > 0"));
        }
        let ratio = self.dt_agent / self.dt_dynamics;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(CoreError::config(
                "sim.dt_agent",
                "must be an integer multiple of dt_dynamics",
            ));
        }
        if !(self.duration_max > 0.0) {
            return Err(CoreError::config("sim.duration_max", "must be > 0"));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.dt_agent / self.dt_dynamics).round() as usize
    }

    /// Time at agent step `k`, computed without accumulation.
    pub fn time_at(&self, k: u64) -> f64 {
        k as f64 * self.dt_agent
    }
}

/// All parameters of the simulated task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub vehicle: VehicleParams,
    pub tire: TireParams,
    pub wheel: WheelParams,
    pub scenario: ScenarioConfig,
    pub grid: GridSpec,
    pub reward: RewardWeights,
    pub actions: ActionConfig,
    pub tracker: TrackerParams,
    pub observation: ObservationScales,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.vehicle.validate()?;
        self.tire.validate()?;
        self.wheel.validate()?;
        self.scenario.validate()?;
        self.grid.validate()?;
        self.reward.validate()?;
        self.actions.validate()?;
        self.tracker.validate()?;
        self.observation.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Collision,
    /// Came to rest; `compliant` when the stop is inside the stop window
    /// short of the zone.
    Stopped { compliant: bool },
    EndOfPath,
    Timeout,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Collision => "collision",
            Terminal::Stopped { compliant: true } => "stopped",
            Terminal::Stopped { compliant: false } => "stopped_outside_window",
            Terminal::EndOfPath => "end_of_path",
            Terminal::Timeout => "timeout",
        }
    }
}

/// Everything derived from one observed state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAssessment {
    pub metrics: SafetyMetrics,
    pub zone: ZoneRelation,
    pub v_ref: f64,
    pub collision: bool,
    pub path_end: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub cfg: EnvConfig,
    pub scenario: Scenario,
    pub plant: Plant,
}

impl Task {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = Scenario::new(cfg.scenario.clone())?;
        let plant = Plant::new(cfg.vehicle, cfg.tire, cfg.wheel, cfg.scenario.mu);
        Ok(Task { cfg, scenario, plant })
    }

    pub fn action_count(&self) -> usize {
        self.cfg.actions.count()
    }

    pub fn fusion_len(&self) -> usize {
        self.cfg.observation.fusion_len(self.cfg.scenario.pedestrian_count)
    }

    pub fn grid_len(&self) -> usize {
        self.cfg.grid.cells()
    }

    pub fn initial_state(&self) -> PlantState {
        let (x, y) = self.scenario.centerline.point_at(0.0);
        let psi = self.scenario.centerline.heading_at(0.0);
        PlantState::at_speed(x, y, psi, self.cfg.scenario.initial_speed)
    }

    /// Actuation for `action`, with steering from the path tracker.
    pub fn control(&self, action: usize, ego: &VehicleState) -> Result<Actuation> {
        let steer = lateral_track(ego, &self.scenario.centerline, &self.cfg.vehicle, &self.cfg.tracker);
        actuation(
            action,
            steer.delta,
            ego,
            self.cfg.scenario.v_set,
            &self.cfg.actions,
            &self.cfg.vehicle,
            &self.cfg.wheel,
        )
    }

    /// Integrates the plant over one agent period and moves the actors.
    pub fn advance(&self, state: &PlantState, actors: &mut [Actor], act: &Actuation, t0: f64) -> Result<PlantState> {
        let sim = &self.cfg.sim;
        let mut s = *state;
        for i in 0..sim.substeps() {
            s = self
                .plant
                .advance(&s, act, sim.dt_dynamics, sim.integrator, t0 + i as f64 * sim.dt_dynamics)?;
        }
        for a in actors.iter_mut() {
            a.advance(sim.dt_agent);
        }
        Ok(s)
    }

    pub fn assess(&self, ego: &VehicleState, actors: &[ActorSnapshot]) -> StateAssessment {
        let c = &self.cfg.scenario;
        let metrics = compute_ttz(ego, actors, &self.scenario, self.cfg.vehicle.v_eps);
        let zone = zone_relation(ego, &self.scenario);
        let threatened = zone_threatened(metrics.actors.iter().map(|a| a.ttz_actor));
        let v_ref = reference_speed(zone.distance, zone.past, threatened, c.stop_margin, c.a_ref, c.v_set);
        let collision = actors.iter().any(|a| self.hits(ego, a));
        let s = self.scenario.centerline.project(ego.x, ego.y).s;
        let path_end = s + c.ego_front >= self.scenario.centerline.length();
        StateAssessment {
            metrics,
            zone,
            v_ref,
            collision,
            path_end,
        }
    }

    fn hits(&self, ego: &VehicleState, a: &ActorSnapshot) -> bool {
        let c = &self.cfg.scenario;
        let (sin_h, cos_h) = ego.psi.sin_cos();
        let (dx, dy) = (a.x - ego.x, a.y - ego.y);
        let f = dx * cos_h + dy * sin_h;
        let l = -dx * sin_h + dy * cos_h;
        let nf = f.clamp(-c.ego_rear, c.ego_front);
        let nl = l.clamp(-c.ego_width / 2.0, c.ego_width / 2.0);
        (f - nf).hypot(l - nl) < c.pedestrian_radius
    }

    pub fn observe(&self, ego: &VehicleState, actors: &[ActorSnapshot], st: &StateAssessment) -> AgentObservation {
        let grid = build_grid(ego, actors, &self.cfg.grid);
        observe(
            ego,
            actors,
            grid,
            &st.metrics,
            st.zone.distance,
            st.v_ref,
            &self.scenario,
            &self.cfg.observation,
        )
    }

    /// Reward and termination for the transition that ended in `ego` at
    /// agent step `k`.
    pub fn outcome(&self, ego: &VehicleState, st: &StateAssessment, action_changed: bool, k: u64) -> Outcome {
        let c = &self.cfg.scenario;
        let stopped = ego.v <= c.v_stop;
        let compliant = stopped
            && !st.zone.past
            && st.zone.distance >= 0.0
            && st.zone.distance <= c.stop_margin + c.stop_window;
        let terminal = if st.collision {
            Some(Terminal::Collision)
        } else if stopped {
            Some(Terminal::Stopped { compliant })
        } else if st.path_end {
            Some(Terminal::EndOfPath)
        } else if self.cfg.sim.time_at(k) >= self.cfg.sim.duration_max - 1e-9 {
            Some(Terminal::Timeout)
        } else {
            None
        };
        let r = reward(
            &RewardContext {
                v: ego.v,
                v_ref: st.v_ref,
                v_set: c.v_set,
                action_changed,
                collision: st.collision,
                compliant_stop: compliant && !st.collision,
            },
            &self.cfg.reward,
        );
        Outcome { reward: r, terminal }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// Completed agent steps.
    pub step: u64,
    pub plant: PlantState,
    pub actors: Vec<Actor>,
    pub prev_action: Option<usize>,
    pub done: bool,
}

impl World {
    pub fn snapshots(&self) -> Vec<ActorSnapshot> {
        self.actors.iter().map(Actor::snapshot).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: AgentObservation,
    pub reward: f64,
    pub terminal: Option<Terminal>,
    pub assessment: StateAssessment,
    pub t: f64,
}

/// In-process environment: one [`Task`] plus the mutable world.
#[derive(Debug, Clone)]
pub struct Env {
    pub task: Task,
    pub world: World,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        let task = Task::new(cfg)?;
        let world = World {
            step: 0,
            plant: task.initial_state(),
            actors: Vec::new(),
            prev_action: None,
            done: true,
        };
        Ok(Env { task, world })
    }

    /// Starts an episode whose actor placement is drawn from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<AgentObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actors = self.task.scenario.spawn_actors(&mut rng)?;
        self.world = World {
            step: 0,
            plant: self.task.initial_state(),
            actors,
            prev_action: None,
            done: false,
        };
        let snaps = self.world.snapshots();
        let st = self.task.assess(&self.world.plant.vehicle, &snaps);
        Ok(self.task.observe(&self.world.plant.vehicle, &snaps, &st))
    }

    pub fn current_assessment(&self) -> StateAssessment {
        self.task.assess(&self.world.plant.vehicle, &self.world.snapshots())
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.world.done {
            return Err(CoreError::invalid("episode finished; call reset"));
        }
        let act = self.task.control(action, &self.world.plant.vehicle)?;
        let t0 = self.task.cfg.sim.time_at(self.world.step);
        let next = match self.task.advance(&self.world.plant, &mut self.world.actors, &act, t0) {
            Ok(s) => s,
            Err(e) => {
                self.world.done = true;
                return Err(e);
            }
        };
        self.world.plant = next;
        self.world.step += 1;
        let changed = self.world.prev_action.is_some_and(|p| p != action);
        self.world.prev_action = Some(action);

        let snaps = self.world.snapshots();
        let ego = self.world.plant.vehicle;
        let st = self.task.assess(&ego, &snaps);
        let out = self.task.outcome(&ego, &st, changed, self.world.step);
        self.world.done = out.terminal.is_some();
        Ok(StepResult {
            obs: self.task.observe(&ego, &snaps, &st),
            reward: out.reward,
            terminal: out.terminal,
            assessment: st,
            t: self.task.cfg.sim.time_at(self.world.step),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::actions::Longitudinal;

    fn action(l: Longitudinal) -> usize {
        Longitudinal::ALL.iter().position(|x| *x == l).unwrap()
    }

    #[test]
    fn substep_ratio_validated() {
        let bad = SimConfig {
            dt_agent: 0.0505,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SimConfig::default().substeps(), 50);
    }

    #[test]
    fn hard_brake_stops_short_and_terminates() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        env.reset(1).unwrap();
        let mut last_v = f64::INFINITY;
        loop {
            let r = env.step(action(Longitudinal::HardBrake)).unwrap();
            let v = env.world.plant.vehicle.v;
            assert!(v <= last_v + 1e-9);
            last_v = v;
            if let Some(t) = r.terminal {
                // Stopped far from the zone: outside the bonus window.
                assert_eq!(t, Terminal::Stopped { compliant: false });
                break;
            }
        }
        assert!(env.step(0).is_err());
    }

    #[test]
    fn episodes_are_deterministic() {
        let run = |seed| {
            let mut env = Env::new(EnvConfig::default()).unwrap();
            env.reset(seed).unwrap();
            let mut trace = Vec::new();
            for k in 0..120 {
                let r = env.step((k / 7) % 5).unwrap();
                trace.push((env.world.plant.vehicle, r.reward, r.obs.fusion()));
                if r.terminal.is_some() {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn driving_through_collides_or_crosses() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        env.reset(3).unwrap();
        let mut saw_red = false;
        let term = loop {
            let r = env.step(action(Longitudinal::HoldSetSpeed)).unwrap();
            saw_red |= r.assessment.metrics.worst_band() == crate::sim::safety::Band::Red;
            if let Some(t) = r.terminal {
                break t;
            }
        };
        assert!(saw_red);
        assert!(matches!(term, Terminal::Collision | Terminal::EndOfPath));
    }

    #[test]
    fn reference_policy_stops_in_window_without_red() {
        // Track v_ref with a bang-bang choice between soft brake and hold.
        let mut env = Env::new(EnvConfig::default()).unwrap();
        for seed in 0..5 {
            env.reset(seed).unwrap();
            let mut st = env.current_assessment();
            let term = loop {
                let v = env.world.plant.vehicle.v;
                let a = if v > st.v_ref + 0.2 {
                    Longitudinal::SoftBrake
                } else if v > st.v_ref {
                    Longitudinal::Coast
                } else {
                    Longitudinal::HoldSetSpeed
                };
                let r = env.step(action(a)).unwrap();
                assert_ne!(r.assessment.metrics.worst_band(), crate::sim::safety::Band::Red);
                st = r.assessment;
                if let Some(t) = r.terminal {
                    break t;
                }
            };
            assert_eq!(term, Terminal::Stopped { compliant: true }, "seed {seed}");
        }
    }
}
