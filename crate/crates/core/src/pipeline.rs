//! End-to-end runs behind the command-line subcommands: offline training
//! and evaluation, the two halves of a linked run, and trace replay.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::agent::network::{argmax, NetworkSpec, QNetwork};
use crate::agent::train::{rollout, train_with, write_episode_log, EpisodeLog, Rollout};
use crate::config::PipelineConfig;
use crate::error::{CoreError, Result};
use crate::link::hil::{deviation, run_controller, run_environment, DeviationReport};
use crate::link::session::{controller_handshake, environment_handshake, Endpoint};
use crate::link::trace::{overlap, read_trace, receive_trace, send_trace, write_trace, OverlapReport, TraceRow};
use crate::link::transport::{MemoryTransport, Transport, UdpTransport};
use crate::link::LinkError;
use crate::sim::actions::Longitudinal;
use crate::sim::engine::{Env, Task};
use crate::sim::metrics::{MetricsRow, MetricsWriter};
use crate::sim::observation::AgentObservation;
use crate::sim::safety::Band;

/// Written once a run ends, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub status: String,
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub config: PipelineConfig,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Tracks the files a run produced so the manifest can list them.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.root.join(name)
    }
}

/// Runs `body` and writes `manifest.json` whatever the outcome.
pub fn with_manifest<T>(
    command: &str,
    version: &str,
    cfg: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
    body: impl FnOnce(&mut RunDir) -> Result<T>,
) -> Result<T> {
    let started = unix_now();
    let mut dir = RunDir::create(out_dir)?;
    let result = body(&mut dir);
    let manifest = RunManifest {
        command: command.to_string(),
        version: version.to_string(),
        seed,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        outputs: dir.outputs.clone(),
        config: cfg.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    result
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub steps: u64,
    pub seconds: f64,
    pub leading_mean_step_reward: f64,
    pub trailing_mean_step_reward: f64,
    pub collisions: usize,
}

fn window_mean(log: &[EpisodeLog]) -> f64 {
    if log.is_empty() {
        return f64::NAN;
    }
    log.iter().map(|e| e.mean_step_reward).sum::<f64>() / log.len() as f64
}

/// Trains with `cfg.agent`, writing `model.json`, `episodes.csv` and
/// `train_report.json`. A failure still leaves the episodes logged so far.
pub fn mil_train(cfg: &PipelineConfig, seed: u64, dir: &mut RunDir) -> Result<TrainReport> {
    let mut env = Env::new(cfg.env())?;
    let started = Instant::now();
    let mut partial = Vec::new();
    let out = train_with(&mut env, &cfg.agent, seed, |e| {
        log::info!(
            "episode {} reward {:.3} steps {} eps {:.3} {:?}",
            e.episode,
            e.mean_step_reward,
            e.steps,
            e.epsilon,
            e.outcome
        );
        partial.push(e.clone());
    });
    let log_path = dir.path("episodes.csv");
    let out = match out {
        Ok(o) => o,
        Err(e) => {
            write_episode_log(BufWriter::new(File::create(&log_path)?), &partial)?;
            return Err(e);
        }
    };
    write_episode_log(BufWriter::new(File::create(&log_path)?), &out.log)?;
    out.net.save(&dir.path("model.json"))?;
    let w = 100.min(out.log.len());
    let report = TrainReport {
        episodes: out.log.len(),
        steps: out.steps,
        seconds: started.elapsed().as_secs_f64(),
        leading_mean_step_reward: window_mean(&out.log[..w]),
        trailing_mean_step_reward: window_mean(&out.log[out.log.len() - w..]),
        collisions: out.log.iter().map(|e| e.collisions).sum(),
    };
    write_json(&dir.path("train_report.json"), &report)?;
    Ok(report)
}

/// Where actions come from during evaluation or a linked run.
#[derive(Debug, Clone)]
pub enum Policy {
    Model(Box<QNetwork>),
    /// Hard brake at every step.
    HardBrake,
    /// Hold the set speed at every step.
    NeverBrake,
    /// Track the reference speed with soft brake, coast and hold.
    Reference,
}

impl Policy {
    /// `hard-brake`, `never-brake`, `reference`, or a model file path.
    pub fn parse(spec: &str) -> Result<Policy> {
        match spec {
            "hard-brake" => Ok(Policy::HardBrake),
            "never-brake" => Ok(Policy::NeverBrake),
            "reference" => Ok(Policy::Reference),
            path => Ok(Policy::Model(Box::new(QNetwork::load(Path::new(path))?))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Model(_) => "model",
            Policy::HardBrake => "hard-brake",
            Policy::NeverBrake => "never-brake",
            Policy::Reference => "reference",
        }
    }

    /// The model must match the task's input and action dimensions.
    pub fn check(&self, task: &Task) -> Result<()> {
        if let Policy::Model(net) = self {
            let want = NetworkSpec::new(task.grid_len(), task.fusion_len(), task.action_count());
            let got = &net.spec;
            if got.grid_input_dim != want.grid_input_dim
                || got.fusion_input_dim != want.fusion_input_dim
                || got.output_dim != want.output_dim
            {
                return Err(CoreError::ModelIncompatible(format!(
                    "model expects grid {} / fusion {} / actions {}, configuration gives {} / {} / {}",
                    got.grid_input_dim,
                    got.fusion_input_dim,
                    got.output_dim,
                    want.grid_input_dim,
                    want.fusion_input_dim,
                    want.output_dim
                )));
            }
        }
        Ok(())
    }

    pub fn decider<'a>(&'a self, task: &Task) -> impl FnMut(&AgentObservation) -> Result<usize> + 'a {
        let scales = task.cfg.observation;
        let index = |l: Longitudinal| Longitudinal::ALL.iter().position(|x| *x == l).expect("listed");
        move |obs| match self {
            Policy::Model(net) => Ok(argmax(&net.forward(&obs.grid.to_vec(), &obs.fusion())?)),
            Policy::HardBrake => Ok(index(Longitudinal::HardBrake)),
            Policy::NeverBrake => Ok(index(Longitudinal::HoldSetSpeed)),
            Policy::Reference => {
                let v = obs.ego[0] * scales.speed;
                let v_ref = obs.zone[1] * scales.speed;
                Ok(index(if v > v_ref + 0.2 {
                    Longitudinal::SoftBrake
                } else if v > v_ref {
                    Longitudinal::Coast
                } else {
                    Longitudinal::HoldSetSpeed
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub outcome: Option<String>,
    pub stopped_before_crosswalk: bool,
    pub collision: bool,
    pub final_distance_m: f64,
    pub steps: usize,
    /// The (vehicle, actor) TTZ pair at the most critical step.
    pub min_ttz: Option<(f64, f64)>,
    /// Steps counted by their worst band.
    pub band_histogram: BTreeMap<String, usize>,
    pub speed_tracking_rms: f64,
}

impl RunSummary {
    pub fn of(r: &Rollout) -> Self {
        let mut hist: BTreeMap<String, usize> = [Band::Clear, Band::Blue, Band::Orange, Band::Red]
            .iter()
            .map(|b| (b.as_str().to_string(), 0))
            .collect();
        for row in &r.rows {
            *hist.entry(row.worst_band().as_str().to_string()).or_default() += 1;
        }
        let min_ttz = r
            .rows
            .iter()
            .flat_map(|row| row.ttz.iter().copied())
            .min_by(|a, b| a.0.max(a.1).total_cmp(&b.0.max(b.1)));
        let n = r.rows.len().max(1) as f64;
        let rms = (r.rows.iter().map(|row| (row.v - row.v_ref).powi(2)).sum::<f64>() / n).sqrt();
        RunSummary {
            seed: r.seed,
            outcome: r.outcome.map(|t| t.as_str().to_string()),
            stopped_before_crosswalk: r.stopped_before_zone() && !r.collided(),
            collision: r.collided(),
            final_distance_m: r.final_distance,
            steps: r.rows.len(),
            min_ttz,
            band_histogram: hist,
            speed_tracking_rms: rms,
        }
    }

    pub fn has_red(&self) -> bool {
        self.band_histogram.get("red").copied().unwrap_or(0) > 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: String,
    pub initial_speed: f64,
    pub runs: usize,
    pub stopped_before_crosswalk: usize,
    pub collisions: usize,
    /// Runs that stopped without collision yet touched the red band.
    pub red_in_passing: usize,
    pub per_run: Vec<RunSummary>,
}

fn write_metrics(path: &Path, rows: &[MetricsRow], actors: usize) -> Result<()> {
    let mut w = MetricsWriter::new(BufWriter::new(File::create(path)?), actors)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

fn trace_of(rows: &[MetricsRow]) -> Vec<TraceRow> {
    rows.iter()
        .map(|r| TraceRow {
            t_us: (r.t * 1e6).round() as u64,
            x: r.x,
            y: r.y,
            psi: r.psi,
            v: r.v,
        })
        .collect()
}

/// Greedy evaluation over seeds `seed .. seed + runs`. The first run's
/// metrics and trace go to `metrics.csv` and `trace.csv`; every run is
/// summarized in `summary.json`.
pub fn mil_eval(cfg: &PipelineConfig, policy: &Policy, seed: u64, runs: usize, dir: &mut RunDir) -> Result<EvalSummary> {
    let mut env = Env::new(cfg.env())?;
    policy.check(&env.task)?;
    let task = Task::new(cfg.env())?;
    let mut decide = policy.decider(&task);
    let actors = cfg.scenario.pedestrian_count;
    let mut per_run = Vec::with_capacity(runs);
    for i in 0..runs as u64 {
        let r = rollout(&mut env, &mut decide, seed + i)?;
        if i == 0 {
            write_metrics(&dir.path("metrics.csv"), &r.rows, actors)?;
            write_trace(BufWriter::new(File::create(dir.path("trace.csv"))?), &trace_of(&r.rows))?;
        }
        per_run.push(RunSummary::of(&r));
    }
    let summary = EvalSummary {
        policy: policy.name().to_string(),
        initial_speed: cfg.scenario.initial_speed,
        runs,
        stopped_before_crosswalk: per_run.iter().filter(|r| r.stopped_before_crosswalk).count(),
        collisions: per_run.iter().filter(|r| r.collision).count(),
        red_in_passing: per_run
            .iter()
            .filter(|r| r.stopped_before_crosswalk && r.has_red())
            .count(),
        per_run,
    };
    write_json(&dir.path("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSummary {
    pub steps: u64,
    pub controls_applied: u64,
    pub uplink_dropped: u64,
    pub downlink_dropped: u64,
    pub malformed: u64,
    pub fault: Option<String>,
}

fn link_error(e: LinkError) -> CoreError {
    CoreError::Link(e)
}

/// Environment half of a linked run over an already-open transport.
pub fn hil_environment_on<T: Transport>(
    cfg: &PipelineConfig,
    seed: u64,
    transport: T,
    realtime: bool,
    dir: &mut RunDir,
) -> Result<EnvironmentSummary> {
    let task = Task::new(cfg.env())?;
    let mut ep = Endpoint::new(transport);
    let session = environment_handshake(
        &mut ep,
        Duration::from_millis(cfg.link.handshake_timeout_ms),
        cfg.loop_options(realtime).lockstep,
        cfg.link_digest(seed),
    )
    .map_err(link_error)?;
    let report = run_environment(&mut ep, &task, seed, session, &cfg.loop_options(realtime))?;
    write_trace(BufWriter::new(File::create(dir.path("trace.csv"))?), &report.trace)?;
    let summary = EnvironmentSummary {
        steps: report.steps,
        controls_applied: report.controls_applied,
        uplink_dropped: report.uplink_dropped,
        downlink_dropped: report.downlink_dropped,
        malformed: ep.malformed,
        fault: report.fault.clone(),
    };
    write_json(&dir.path("environment.json"), &summary)?;
    if let Some(e) = report.failure {
        return Err(link_error(e));
    }
    if let Some(f) = report.fault {
        return Err(CoreError::SimulationFault {
            t: report.steps as f64 * cfg.sim.dt_agent,
            reason: f,
            last_valid: Box::new(task.initial_state().vehicle),
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub run: RunSummary,
    pub decisions: u64,
    pub pose_gaps: u64,
    pub pose_stale: u64,
    pub actors_gaps: u64,
    pub malformed: u64,
    pub deviation: DeviationReport,
}

/// Controller half of a linked run. Writes `metrics.csv` (also when the
/// peer is lost), `summary.json` and `deviation.json`, the latter against
/// an offline episode with the same seed and policy.
pub fn hil_controller_on<T: Transport>(
    cfg: &PipelineConfig,
    policy: &Policy,
    seed: u64,
    transport: T,
    dir: &mut RunDir,
) -> Result<ControllerSummary> {
    let task = Task::new(cfg.env())?;
    policy.check(&task)?;
    let mut ep = Endpoint::new(transport);
    let session = controller_handshake(
        &mut ep,
        Duration::from_millis(cfg.link.handshake_timeout_ms),
        cfg.loop_options(false).lockstep,
        cfg.link_digest(seed),
    )
    .map_err(link_error)?;
    let mut decide = policy.decider(&task);
    let report = run_controller(
        &mut ep,
        &task,
        session,
        &mut decide,
        Duration::from_millis(cfg.link.heartbeat_timeout_ms),
    )?;
    write_metrics(&dir.path("metrics.csv"), &report.rows, cfg.scenario.pedestrian_count)?;
    if let Some(e) = report.failure {
        return Err(link_error(e));
    }
    let linked = report.as_rollout(seed);
    let mut env = Env::new(cfg.env())?;
    let offline = rollout(&mut env, &mut decide, seed)?;
    let dev = deviation(&linked, &offline);
    write_json(&dir.path("deviation.json"), &dev)?;
    let summary = ControllerSummary {
        run: RunSummary::of(&linked),
        decisions: report.decisions,
        pose_gaps: report.streams.pose.gaps,
        pose_stale: report.streams.pose.stale,
        actors_gaps: report.streams.actors.gaps,
        malformed: ep.malformed,
        deviation: dev,
    };
    write_json(&dir.path("summary.json"), &summary)?;
    Ok(summary)
}

pub fn udp_transport(cfg: &PipelineConfig) -> Result<UdpTransport> {
    UdpTransport::bind(&cfg.link.bind, &cfg.link.peer).map_err(CoreError::from)
}

/// Both halves in one process over an in-memory link; outputs go to
/// `environment/` and `controller/` below the run directory.
pub fn hil_loopback(cfg: &PipelineConfig, policy: &Policy, seed: u64, dir: &mut RunDir) -> Result<ControllerSummary> {
    let (a, b) = MemoryTransport::pair();
    let env_cfg = cfg.clone();
    let env_root = dir.root.join("environment");
    let env_thread = std::thread::spawn(move || -> Result<EnvironmentSummary> {
        let mut d = RunDir::create(&env_root)?;
        hil_environment_on(&env_cfg, seed, b, false, &mut d)
    });
    let mut cdir = RunDir::create(&dir.root.join("controller"))?;
    let res = hil_controller_on(cfg, policy, seed, a, &mut cdir);
    let env_res = env_thread
        .join()
        .map_err(|_| CoreError::invalid("environment thread panicked"))?;
    dir.outputs
        .extend(cdir.outputs.iter().map(|o| format!("controller/{o}")));
    dir.outputs.push("environment/trace.csv".into());
    dir.outputs.push("environment/environment.json".into());
    let summary = res?;
    env_res?;
    Ok(summary)
}

/// Streams a recorded trace through the frame transform and latency model
/// into a virtual twin, then compares the two. Writes `virtual_trace.csv`
/// and `overlap.json`.
pub fn vve_replay(cfg: &PipelineConfig, trace_path: &Path, dir: &mut RunDir) -> Result<OverlapReport> {
    let rows = read_trace(BufReader::new(File::open(trace_path)?))?;
    let (a, b) = MemoryTransport::pair();
    let sender_rows = rows.clone();
    let transform = cfg.link.transform;
    let pacing = cfg.link.pacing;
    let sender = std::thread::spawn(move || {
        let mut ep = Endpoint::new(a);
        send_trace(&mut ep, &sender_rows, &transform, pacing)
    });
    let mut ep = Endpoint::new(b);
    let log = receive_trace(
        &mut ep,
        cfg.link.latency(),
        Duration::from_millis(cfg.link.heartbeat_timeout_ms),
    );
    sender
        .join()
        .map_err(|_| CoreError::invalid("replay sender panicked"))?
        .map_err(link_error)?;
    let log = log?;
    let twin: Vec<TraceRow> = log
        .arrivals
        .iter()
        .map(|a| TraceRow {
            t_us: a.arrival_us,
            x: a.pose.x,
            y: a.pose.y,
            psi: a.pose.psi,
            v: a.pose.v,
        })
        .collect();
    write_trace(BufWriter::new(File::create(dir.path("virtual_trace.csv"))?), &twin)?;
    let report = overlap(&rows, &log, &cfg.link.transform);
    write_json(&dir.path("overlap.json"), &report)?;
    Ok(report)
}
