//! The sectioned configuration file shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::ddqn::TrainConfig;
use crate::error::{CoreError, Result};
use crate::link::hil::LoopOptions;
use crate::link::latency::LatencyModel;
use crate::link::trace::Pacing;
use crate::link::transform::FrameTransform;
use crate::sim::actions::ActionConfig;
use crate::sim::engine::{EnvConfig, SimConfig};
use crate::sim::grid::GridSpec;
use crate::sim::observation::ObservationScales;
use crate::sim::reward::RewardWeights;
use crate::sim::scenario::ScenarioConfig;
use crate::sim::tracker::TrackerParams;
use crate::tire::TireParams;
use crate::vehicle::VehicleParams;
use crate::wheel::WheelParams;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "VVE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    #[default]
    Lockstep,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub bind: String,
    pub peer: String,
    pub handshake_timeout_ms: u64,
    pub heartbeat_timeout_ms: u64,
    pub mode: LinkMode,
    /// One-way delay applied to each direction.
    pub base_delay_ms: f64,
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub latency_seed: u64,
    pub pose_rate_hz: f64,
    pub actors_rate_hz: f64,
    pub pacing: Pacing,
    pub transform: FrameTransform,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            bind: "127.0.0.1:47100".into(),
            peer: "127.0.0.1:47101".into(),
            handshake_timeout_ms: 5000,
            heartbeat_timeout_ms: 2000,
            mode: LinkMode::Lockstep,
            base_delay_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            latency_seed: 1,
            pose_rate_hz: 100.0,
            actors_rate_hz: 20.0,
            pacing: Pacing::Max,
            transform: FrameTransform::identity(),
        }
    }
}

impl LinkConfig {
    pub fn latency(&self) -> LatencyModel {
        LatencyModel {
            base_delay_ms: self.base_delay_ms,
            jitter_ms: self.jitter_ms,
            drop_prob: self.drop_prob,
            seed: self.latency_seed,
        }
    }

    fn validate(&self, sim: &SimConfig) -> Result<()> {
        self.latency().validate()?;
        if self.handshake_timeout_ms == 0 {
            return Err(CoreError::config("link.handshake_timeout_ms", "must be > 0"));
        }
        if self.heartbeat_timeout_ms == 0 {
            return Err(CoreError::config("link.heartbeat_timeout_ms", "must be > 0"));
        }
        let tick_us = (sim.dt_dynamics * 1e6).round() as u64;
        let agent_us = (sim.dt_agent * 1e6).round() as u64;
        let pose_us = period_us("link.pose_rate_hz", self.pose_rate_hz)?;
        if pose_us % tick_us != 0 || agent_us % pose_us != 0 {
            return Err(CoreError::config(
                "link.pose_rate_hz",
                "pose period must be a multiple of sim.dt_dynamics and divide sim.dt_agent",
            ));
        }
        // Decisions are taken on ACTORS, once per agent step.
        if period_us("link.actors_rate_hz", self.actors_rate_hz)? != agent_us {
            return Err(CoreError::config(
                "link.actors_rate_hz",
                format!("must equal 1 / sim.dt_agent = {} Hz", 1.0 / sim.dt_agent),
            ));
        }
        Ok(())
    }
}

fn period_us(key: &str, hz: f64) -> Result<u64> {
    if !(hz > 0.0 && hz.is_finite()) {
        return Err(CoreError::config(key, "must be finite and > 0"));
    }
    Ok((1e6 / hz).round() as u64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
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
    pub agent: TrainConfig,
    pub link: LinkConfig,
}

impl PipelineConfig {
    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            sim: self.sim,
            vehicle: self.vehicle,
            tire: self.tire,
            wheel: self.wheel,
            scenario: self.scenario.clone(),
            grid: self.grid,
            reward: self.reward,
            actions: self.actions.clone(),
            tracker: self.tracker,
            observation: self.observation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env().validate()?;
        self.agent.validate()?;
        self.link.validate(&self.sim)
    }

    pub fn loop_options(&self, realtime: bool) -> LoopOptions {
        let lat = self.link.latency();
        LoopOptions {
            lockstep: self.link.mode == LinkMode::Lockstep,
            realtime,
            pose_period_us: (1e6 / self.link.pose_rate_hz).round() as u64,
            heartbeat_timeout: std::time::Duration::from_millis(self.link.heartbeat_timeout_ms),
            uplink: lat,
            downlink: LatencyModel {
                seed: lat.seed.wrapping_add(1),
                ..lat
            },
        }
    }

    /// Fingerprint both link ends compare in the handshake. Covers what
    /// must agree between the processes, not the local addresses.
    pub fn link_digest(&self, seed: u64) -> u64 {
        #[derive(Serialize)]
        struct Shared<'a> {
            seed: u64,
            env: EnvConfig,
            mode: LinkMode,
            latency: LatencyModel,
            pose_rate_hz: f64,
            actors_rate_hz: f64,
            transform: &'a FrameTransform,
        }
        let shared = Shared {
            seed,
            env: self.env(),
            mode: self.link.mode,
            latency: self.link.latency(),
            pose_rate_hz: self.link.pose_rate_hz,
            actors_rate_hz: self.link.actors_rate_hz,
            transform: &self.link.transform,
        };
        let json = serde_json::to_vec(&shared).expect("config serializes");
        fnv1a(&json)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Parses TOML text; keys missing from it keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CoreError::config("<file>", e.message().to_string()))?;
        let mut cfg = PipelineConfig::default();
        for (section, value) in user {
            let toml::Value::Table(entries) = value else {
                return Err(CoreError::config(section, "expected a [section] table"));
            };
            for (key, v) in entries {
                cfg.set_value(&section, &key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CoreError::Config { key, reason } => CoreError::Config {
                key,
                reason: format!("{reason} (in {})", path.display()),
            },
            other => other,
        })
    }

    /// Applies `section.key=value`. The value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CoreError::config(assignment, "override must look like section.key=value"))?;
        let path = path.trim();
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| CoreError::config(path, "override key must be section.key"))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        // Nested tables such as link.transform.rotation.
        let (key, value) = match key.split_once('.') {
            Some((outer, inner)) => {
                let mut t = toml::Table::new();
                t.insert(inner.to_string(), value);
                (outer, toml::Value::Table(t))
            }
            None => (key, value),
        };
        self.set_value(section, key, value)?;
        self.validate()
    }

    fn set_value(&mut self, section: &str, key: &str, value: toml::Value) -> Result<()> {
        let full = format!("{section}.{key}");
        let mut root = toml::Table::try_from(&*self).expect("config serializes to TOML");
        let Some(toml::Value::Table(sec)) = root.get_mut(section) else {
            return Err(CoreError::config(full, format!("unknown section [{section}]")));
        };
        let merged = match (sec.remove(key), value) {
            (Some(toml::Value::Table(mut old)), toml::Value::Table(new)) => {
                for (k, v) in new {
                    if !old.contains_key(&k) {
                        return Err(CoreError::config(format!("{full}.{k}"), "unknown key"));
                    }
                    old.insert(k, v);
                }
                toml::Value::Table(old)
            }
            (Some(_), v) => v,
            (None, v) => {
                // Fields that serialize to nothing (empty lists) still exist.
                if !section_accepts(section, key) {
                    return Err(CoreError::config(full, "unknown key"));
                }
                v
            }
        };
        sec.insert(key.to_string(), merged);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| CoreError::config(full, e.message().to_string()))?;
        Ok(())
    }
}

fn section_accepts(section: &str, key: &str) -> bool {
    matches!((section, key), ("actions", "steer_offsets"))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
