//! Episode loop: act, store, learn, sync.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::ddqn::{DdqnAgent, TrainConfig};
use crate::agent::network::{NetworkSpec, QNetwork};
use crate::agent::replay::Transition;
use crate::error::{CoreError, Result};
use crate::sim::engine::{Env, Terminal};
use crate::sim::metrics::MetricsRow;
use crate::sim::observation::AgentObservation;
use crate::sim::safety::Band;

/// Separates the environment seed stream from the agent's.
const ENV_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_step_reward: f64,
    pub steps: usize,
    pub epsilon: f64,
    /// NaN when no update ran during the episode.
    pub loss_mean: f64,
    pub collisions: usize,
    #[serde(skip)]
    pub outcome: Option<Terminal>,
}

pub const EPISODE_LOG_HEADER: &str = "episode,total_reward,mean_step_reward,steps,epsilon,loss_mean,collisions";

pub fn write_episode_log<W: Write>(w: W, log: &[EpisodeLog]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(EPISODE_LOG_HEADER.split(','))?;
    for e in log {
        wr.write_record([
            e.episode.to_string(),
            e.total_reward.to_string(),
            e.mean_step_reward.to_string(),
            e.steps.to_string(),
            e.epsilon.to_string(),
            e.loss_mean.to_string(),
            e.collisions.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_episode_log<R: std::io::Read>(r: R) -> Result<Vec<EpisodeLog>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(EPISODE_LOG_HEADER.split(',')) {
        return Err(CoreError::invalid("episode log header mismatch"));
    }
    let bad = |e: std::num::ParseFloatError| CoreError::invalid(e.to_string());
    let bad_int = |e: std::num::ParseIntError| CoreError::invalid(e.to_string());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(EpisodeLog {
            episode: rec[0].parse().map_err(bad_int)?,
            total_reward: rec[1].parse().map_err(bad)?,
            mean_step_reward: rec[2].parse().map_err(bad)?,
            steps: rec[3].parse().map_err(bad_int)?,
            epsilon: rec[4].parse().map_err(bad)?,
            loss_mean: rec[5].parse().map_err(bad)?,
            collisions: rec[6].parse().map_err(bad_int)?,
            outcome: None,
        });
    }
    Ok(out)
}

pub fn network_spec_for(env: &Env) -> NetworkSpec {
    NetworkSpec::new(env.task.grid_len(), env.task.fusion_len(), env.task.action_count())
}

pub struct TrainOutput {
    pub net: QNetwork,
    pub log: Vec<EpisodeLog>,
    pub steps: u64,
}

pub fn train(env: &mut Env, cfg: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    train_with(env, cfg, seed, |_| {})
}

/// Runs `cfg.episodes` episodes. `on_episode` sees each log entry as it is
/// produced. A simulation fault aborts the episode, which is logged with
/// the steps completed so far.
pub fn train_with(
    env: &mut Env,
    cfg: &TrainConfig,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<TrainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed ^ ENV_STREAM);
    let net = QNetwork::init(network_spec_for(env), &mut rng)?;
    let mut agent = DdqnAgent::new(cfg.clone(), net, rng)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut step: u64 = 0;

    for episode in 0..cfg.episodes {
        let mut obs = env.reset(env_rng.gen())?;
        let mut grid = obs.grid.to_vec();
        let mut total = 0.0;
        let mut steps = 0usize;
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let mut collisions = 0;
        let mut outcome = None;

        loop {
            let eps = cfg.epsilon(step);
            let fusion = obs.fusion();
            let action = agent.act(&grid, &fusion, eps)?;
            let res = match env.step(action) {
                Ok(r) => r,
                Err(e @ CoreError::SimulationFault { .. }) => {
                    log::warn!("episode {episode}: {e}; aborting episode");
                    break;
                }
                Err(e) => return Err(e),
            };
            step += 1;
            steps += 1;
            total += res.reward;
            let next_grid = res.obs.grid.to_vec();
            agent.replay.push(Transition {
                grid: obs.grid.clone(),
                fusion,
                action,
                reward: res.reward,
                next_grid: res.obs.grid.clone(),
                next_fusion: res.obs.fusion(),
                // Running out of time is a truncation, not a terminal state.
                terminal: matches!(res.terminal, Some(t) if t != Terminal::Timeout),
            })?;
            if step % cfg.training_frequency == 0 {
                if let Some(l) = agent.train_step()? {
                    loss_sum += l;
                    loss_n += 1;
                }
            }
            agent.sync_target(step);
            obs = res.obs;
            grid = next_grid;
            if let Some(t) = res.terminal {
                if t == Terminal::Collision {
                    collisions += 1;
                }
                outcome = Some(t);
                break;
            }
        }

        let entry = EpisodeLog {
            episode,
            total_reward: total,
            mean_step_reward: if steps > 0 { total / steps as f64 } else { 0.0 },
            steps,
            epsilon: cfg.epsilon(step),
            loss_mean: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
            collisions,
            outcome,
        };
        on_episode(&entry);
        log.push(entry);
    }
    Ok(TrainOutput {
        net: agent.online,
        log,
        steps: step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub outcome: Option<Terminal>,
    /// Front-bumper distance to the zone at the end.
    pub final_distance: f64,
}

impl Rollout {
    pub fn stopped_before_zone(&self) -> bool {
        matches!(self.outcome, Some(Terminal::Stopped { .. })) && self.final_distance >= 0.0
    }

    pub fn collided(&self) -> bool {
        self.outcome == Some(Terminal::Collision)
    }

    pub fn worst_band(&self) -> Band {
        self.rows.iter().map(MetricsRow::worst_band).max().unwrap_or(Band::Clear)
    }
}

/// Greedy episode with a frozen network.
pub fn rollout(env: &mut Env, policy: &mut dyn FnMut(&AgentObservation) -> Result<usize>, seed: u64) -> Result<Rollout> {
    let mut obs = env.reset(seed)?;
    let mut rows = Vec::new();
    loop {
        let action = policy(&obs)?;
        let res = env.step(action)?;
        rows.push(MetricsRow::new(
            res.t,
            &env.world.plant.vehicle,
            res.assessment.v_ref,
            action,
            res.reward,
            &res.assessment.metrics,
        ));
        if let Some(t) = res.terminal {
            return Ok(Rollout {
                seed,
                rows,
                outcome: Some(t),
                final_distance: res.assessment.zone.distance,
            });
        }
        obs = res.obs;
    }
}

pub fn greedy_policy(net: &QNetwork) -> impl FnMut(&AgentObservation) -> Result<usize> + '_ {
    move |obs| {
        let q = net.forward(&obs.grid.to_vec(), &obs.fusion())?;
        Ok(crate::agent::network::argmax(&q))
    }
}
