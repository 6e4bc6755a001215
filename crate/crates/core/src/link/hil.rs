//! Controller and environment loops for a linked run.
//!
//! The environment process owns virtual time. At every agent boundary it
//! publishes POSE and ACTORS, then (in lockstep mode) waits for the CONTROL
//! answering that ACTORS message before integrating the next period. The
//! latency model decides in virtual time when a message arrives, so with a
//! zero model the exchange reduces to the same call sequence as an offline
//! episode.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::train::Rollout;
use crate::error::Result;
use crate::link::codec::{ActorRecord, ByeReason, ControlPayload, Payload, PosePayload};
use crate::link::latency::{LatencyChannel, LatencyModel};
use crate::link::session::{Endpoint, Session, Streams};
use crate::link::trace::TraceRow;
use crate::link::transport::Transport;
use crate::link::LinkError;
use crate::sim::engine::{Task, Terminal};
use crate::sim::metrics::MetricsRow;
use crate::sim::observation::AgentObservation;
use crate::sim::plant::Actuation;
use crate::sim::scenario::ActorSnapshot;
use crate::vehicle::VehicleState;

/// Marks a CONTROL that carries no decision; the environment keeps the
/// actuation it has.
pub const NO_DECISION: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub struct LoopOptions {
    pub lockstep: bool,
    pub realtime: bool,
    pub pose_period_us: u64,
    pub heartbeat_timeout: Duration,
    /// Environment to controller.
    pub uplink: LatencyModel,
    /// Controller to environment.
    pub downlink: LatencyModel,
}

fn us(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

fn pose_of(v: &VehicleState) -> PosePayload {
    PosePayload {
        x: v.x,
        y: v.y,
        psi: v.psi,
        v: v.v,
        beta: v.beta,
        r: v.r,
    }
}

fn vehicle_of(p: &PosePayload) -> VehicleState {
    VehicleState {
        beta: p.beta,
        v: p.v,
        r: p.r,
        x: p.x,
        y: p.y,
        psi: p.psi,
    }
}

fn control_of(action: u32, a: &Actuation) -> ControlPayload {
    ControlPayload {
        action,
        delta_f: a.delta_f,
        delta_r: a.delta_r,
        drive_f: a.drive_f,
        drive_r: a.drive_r,
        brake_f: a.brake_f,
        brake_r: a.brake_r,
        m_zd: a.m_zd,
    }
}

fn actuation_of(c: &ControlPayload) -> Actuation {
    Actuation {
        delta_f: c.delta_f,
        delta_r: c.delta_r,
        drive_f: c.drive_f,
        drive_r: c.drive_r,
        brake_f: c.brake_f,
        brake_r: c.brake_r,
        m_zd: c.m_zd,
    }
}

#[derive(Debug, Default)]
pub struct EnvironmentReport {
    /// True ego state at every pose period, dropped or not.
    pub trace: Vec<TraceRow>,
    pub steps: u64,
    pub controls_applied: u64,
    pub uplink_dropped: u64,
    pub downlink_dropped: u64,
    pub failure: Option<LinkError>,
    pub fault: Option<String>,
}

struct EnvState<'a, T: Transport> {
    ep: &'a mut Endpoint<T>,
    session: Session,
    up: LatencyChannel<()>,
    wall_start: Instant,
    realtime: bool,
}

impl<T: Transport> EnvState<'_, T> {
    fn pace(&self, virtual_us: u64) {
        if self.realtime {
            let due = self.wall_start + Duration::from_micros(virtual_us);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
    }

    /// Sends unless the uplink drops it; returns the virtual arrival time.
    fn publish(&mut self, virtual_us: u64, payload: Payload) -> std::result::Result<Option<u64>, LinkError> {
        match self.up.schedule(virtual_us) {
            Some(arrival) => {
                self.ep.send(self.session.t0_us + virtual_us, payload)?;
                Ok(Some(arrival))
            }
            None => Ok(None),
        }
    }
}

/// Runs the virtual environment for one episode seeded like
/// [`crate::sim::engine::Env::reset`].
pub fn run_environment<T: Transport>(
    ep: &mut Endpoint<T>,
    task: &Task,
    seed: u64,
    session: Session,
    opts: &LoopOptions,
) -> Result<EnvironmentReport> {
    let sim = &task.cfg.sim;
    let dt_dyn_us = us(sim.dt_dynamics);
    let dt_agent_us = us(sim.dt_agent);
    let substeps = sim.substeps() as u64;
    let end_us = us(sim.duration_max) + dt_agent_us;

    let mut actors = task.scenario.spawn_actors(&mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut plant = task.initial_state();
    let mut down: LatencyChannel<ControlPayload> = LatencyChannel::new(opts.downlink)?;
    let mut st = EnvState {
        ep,
        session,
        up: LatencyChannel::new(opts.uplink)?,
        wall_start: Instant::now(),
        realtime: opts.realtime,
    };
    let mut report = EnvironmentReport::default();
    let mut current = Actuation::default();
    let mut k: u64 = 0;

    let result = (|| -> std::result::Result<(), LinkError> {
        loop {
            let t_k = k * dt_agent_us;
            if t_k > end_us {
                st.ep.send(session.t0_us + t_k, Payload::Bye(ByeReason::Done))?;
                return Ok(());
            }
            st.pace(t_k);
            report.trace.push(TraceRow::from_vehicle(t_k, &plant.vehicle));
            st.publish(t_k, Payload::Pose(pose_of(&plant.vehicle)))?;
            let records: Vec<ActorRecord> = actors
                .iter()
                .map(|a| ActorRecord {
                    id: a.id,
                    x: a.x,
                    y: a.y,
                    heading: a.heading,
                    speed: a.speed,
                })
                .collect();
            let decided_at = st.publish(t_k, Payload::Actors(records))?;

            if opts.lockstep {
                if let Some(arrival) = decided_at {
                    match wait_control(st.ep, session.t0_us + t_k, opts.heartbeat_timeout)? {
                        Some(c) => {
                            if c.action != NO_DECISION {
                                down.send(arrival, c);
                            }
                        }
                        None => return Ok(()),
                    }
                }
            }

            for i in 0..substeps {
                let t = t_k + i * dt_dyn_us;
                if !opts.lockstep {
                    if drain_controls(st.ep, &mut down, t)? {
                        return Ok(());
                    }
                }
                while let Some((_, c)) = down.recv_ready(t) {
                    current = actuation_of(&c);
                    report.controls_applied += 1;
                }
                if i > 0 && (t % opts.pose_period_us) == 0 {
                    st.pace(t);
                    report.trace.push(TraceRow::from_vehicle(t, &plant.vehicle));
                    st.publish(t, Payload::Pose(pose_of(&plant.vehicle)))?;
                }
                match task
                    .plant
                    .advance(&plant, &current, sim.dt_dynamics, sim.integrator, t as f64 * 1e-6)
                {
                    Ok(s) => plant = s,
                    Err(e) => {
                        report.fault = Some(e.to_string());
                        st.ep.send(session.t0_us + t, Payload::Bye(ByeReason::Fault))?;
                        return Ok(());
                    }
                }
            }
            for a in actors.iter_mut() {
                a.advance(sim.dt_agent);
            }
            k += 1;
            report.steps = k;
        }
    })();
    report.uplink_dropped = st.up.dropped;
    report.downlink_dropped = down.dropped;
    if let Err(e) = result {
        report.failure = Some(e);
    }
    Ok(report)
}

/// Blocks for the CONTROL answering the ACTORS stamped `t_us`. `None` when
/// the controller said BYE.
fn wait_control<T: Transport>(
    ep: &mut Endpoint<T>,
    t_us: u64,
    timeout: Duration,
) -> std::result::Result<Option<ControlPayload>, LinkError> {
    loop {
        let Some(msg) = ep.recv(timeout)? else {
            return Err(LinkError::HeartbeatTimeout(timeout));
        };
        match msg.payload {
            Payload::Control(c) if msg.t_us == t_us => return Ok(Some(c)),
            Payload::Bye(_) => return Ok(None),
            _ => {}
        }
    }
}

/// Free mode: pull whatever arrived without blocking. Returns true on BYE.
fn drain_controls<T: Transport>(
    ep: &mut Endpoint<T>,
    down: &mut LatencyChannel<ControlPayload>,
    t_us: u64,
) -> std::result::Result<bool, LinkError> {
    while let Some(msg) = ep.recv(Duration::ZERO)? {
        match msg.payload {
            Payload::Control(c) if c.action != NO_DECISION => {
                down.send(t_us, c);
            }
            Payload::Bye(_) => return Ok(true),
            _ => {}
        }
    }
    Ok(false)
}

#[derive(Debug, Default)]
pub struct ControllerReport {
    /// One row per decision after the first, stamped with the state time.
    pub rows: Vec<MetricsRow>,
    pub outcome: Option<Terminal>,
    pub final_distance: f64,
    pub decisions: u64,
    pub streams: Streams,
    pub failure: Option<LinkError>,
    /// Set when the environment ended the run itself.
    pub peer_bye: Option<ByeReason>,
}

impl ControllerReport {
    pub fn as_rollout(&self, seed: u64) -> Rollout {
        Rollout {
            seed,
            rows: self.rows.clone(),
            outcome: self.outcome,
            final_distance: self.final_distance,
        }
    }
}

/// Runs the agent side until a terminal state, a BYE from the environment,
/// or silence longer than the heartbeat timeout.
pub fn run_controller<T: Transport>(
    ep: &mut Endpoint<T>,
    task: &Task,
    session: Session,
    policy: &mut dyn FnMut(&AgentObservation) -> Result<usize>,
    heartbeat_timeout: Duration,
) -> Result<ControllerReport> {
    let dt_agent_us = us(task.cfg.sim.dt_agent);
    let mut report = ControllerReport {
        final_distance: f64::NAN,
        ..Default::default()
    };
    let mut pose: Option<PosePayload> = None;
    // Last two actions, newest first.
    let mut last: (Option<usize>, Option<usize>) = (None, None);

    let result = (|| -> Result<()> {
        loop {
            let Some(msg) = ep.recv(heartbeat_timeout)? else {
                return Err(LinkError::HeartbeatTimeout(heartbeat_timeout).into());
            };
            if !report.streams.accept(&msg) {
                continue;
            }
            match msg.payload {
                Payload::Pose(p) => pose = Some(p),
                Payload::Start { .. } if msg.seq == session.start_seq => {
                    ep.send(msg.t_us, Payload::Ack { start_seq: msg.seq })?;
                }
                Payload::Bye(reason) => {
                    report.peer_bye = Some(reason);
                    return Ok(());
                }
                Payload::Actors(records) => {
                    let Some(p) = pose else {
                        ep.send(msg.t_us, Payload::Control(control_of(NO_DECISION, &Actuation::default())))?;
                        continue;
                    };
                    let k = msg.t_us.saturating_sub(session.t0_us) / dt_agent_us;
                    let ego = vehicle_of(&p);
                    let snaps: Vec<ActorSnapshot> = records
                        .iter()
                        .map(|r| ActorSnapshot {
                            id: r.id,
                            x: r.x,
                            y: r.y,
                            heading: r.heading,
                            speed: r.speed,
                        })
                        .collect();
                    let st = task.assess(&ego, &snaps);
                    report.final_distance = st.zone.distance;
                    if let Some(prev) = last.0 {
                        let changed = last.1.is_some_and(|pp| pp != prev);
                        let out = task.outcome(&ego, &st, changed, k);
                        report.rows.push(MetricsRow::new(
                            task.cfg.sim.time_at(k),
                            &ego,
                            st.v_ref,
                            prev,
                            out.reward,
                            &st.metrics,
                        ));
                        if let Some(t) = out.terminal {
                            report.outcome = Some(t);
                            ep.send(msg.t_us, Payload::Bye(ByeReason::Terminal))?;
                            return Ok(());
                        }
                    }
                    let obs = task.observe(&ego, &snaps, &st);
                    let a = policy(&obs)?;
                    let act = task.control(a, &ego)?;
                    ep.send(msg.t_us, Payload::Control(control_of(a as u32, &act)))?;
                    report.decisions += 1;
                    last = (Some(a), last.0);
                }
                _ => {}
            }
        }
    })();
    if let Err(e) = result {
        match e {
            crate::error::CoreError::Link(l) => {
                let _ = ep.send(session.t0_us, Payload::Bye(ByeReason::Fault));
                report.failure = Some(l);
            }
            other => {
                let _ = ep.send(session.t0_us, Payload::Bye(ByeReason::Fault));
                return Err(other);
            }
        }
    }
    Ok(report)
}

/// How far a linked run drifted from the offline episode with the same
/// seed and policy, compared at matching agent-step times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub matched_steps: usize,
    pub position_rms_m: f64,
    pub position_max_m: f64,
    pub speed_rms_mps: f64,
    pub final_distance_linked_m: f64,
    pub final_distance_offline_m: f64,
    pub outcome_linked: Option<String>,
    pub outcome_offline: Option<String>,
    pub bit_identical: bool,
}

pub fn deviation(linked: &Rollout, offline: &Rollout) -> DeviationReport {
    let mut se_pos = 0.0;
    let mut se_v = 0.0;
    let mut max_pos: f64 = 0.0;
    let mut n = 0usize;
    let mut j = 0usize;
    for a in &linked.rows {
        while j < offline.rows.len() && offline.rows[j].t < a.t - 1e-9 {
            j += 1;
        }
        let Some(b) = offline.rows.get(j) else { break };
        if (b.t - a.t).abs() > 1e-9 {
            continue;
        }
        let d = (a.x - b.x).hypot(a.y - b.y);
        se_pos += d * d;
        se_v += (a.v - b.v).powi(2);
        max_pos = max_pos.max(d);
        n += 1;
    }
    let rms = |s: f64| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() };
    DeviationReport {
        matched_steps: n,
        position_rms_m: rms(se_pos),
        position_max_m: if n == 0 { f64::NAN } else { max_pos },
        speed_rms_mps: rms(se_v),
        final_distance_linked_m: linked.final_distance,
        final_distance_offline_m: offline.final_distance,
        outcome_linked: linked.outcome.map(|t| t.as_str().to_string()),
        outcome_offline: offline.outcome.map(|t| t.as_str().to_string()),
        bit_identical: linked.rows == offline.rows && linked.outcome == offline.outcome,
    }
}
