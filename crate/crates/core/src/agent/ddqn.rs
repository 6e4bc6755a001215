//! Double DQN: the online network picks the next action, the target
//! network values it.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::network::{argmax, Dense, QNetwork};
use crate::agent::optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::agent::replay::ReplayBuffer;
use crate::error::{CoreError, Result};
use crate::sim::grid::flatten_words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Agent steps over which epsilon falls linearly to `epsilon_end`.
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub training_frequency: u64,
    pub target_sync_n: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub buffer_capacity: usize,
    /// Replay size before the first update; never below `batch_size`.
    pub learning_starts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1500,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            batch_size: 64,
            training_frequency: 4,
            target_sync_n: 1000,
            learning_rate: 1e-4,
            momentum: 0.9,
            grad_clip: 10.0,
            optimizer: OptimizerKind::Sgd,
            buffer_capacity: 100_000,
            learning_starts: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::config("agent.gamma", "must lie in [0, 1)"));
        }
        for (key, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::config(format!("agent.{key}"), "must lie in [0, 1]"));
            }
        }
        for (key, v) in [
            ("batch_size", self.batch_size as u64),
            ("training_frequency", self.training_frequency),
            ("target_sync_n", self.target_sync_n),
            ("buffer_capacity", self.buffer_capacity as u64),
        ] {
            if v == 0 {
                return Err(CoreError::config(format!("agent.{key}"), "must be positive"));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(CoreError::config("agent.batch_size", "exceeds buffer_capacity"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::config("agent.learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::config("agent.momentum", "must lie in [0, 1)"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(CoreError::config("agent.grad_clip", "must be >= 0"));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            grad_clip: self.grad_clip,
        }
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Epsilon-greedy choice over `q`.
pub fn act_on_q<R: Rng>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

pub fn act<R: Rng>(net: &QNetwork, grid: &[f64], fusion: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CoreError::invalid("epsilon must lie in [0, 1]"));
    }
    Ok(act_on_q(&net.forward(grid, fusion)?, epsilon, rng))
}

/// `y = r` on terminal transitions, else `r + gamma * Q_target(s', argmax Q_online(s'))`.
pub fn ddqn_target(r: f64, terminal: bool, q_online_next: &[f64], q_target_next: &[f64], gamma: f64) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * q_target_next[argmax(q_online_next)]
    }
}

pub struct Batch {
    pub grid: Array2<f64>,
    pub fusion: Array2<f64>,
    pub next_grid: Array2<f64>,
    pub next_fusion: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    /// Unpacks the records at `idx` into dense rows.
    pub fn gather(replay: &ReplayBuffer, idx: &[usize], grid_dim: usize, fusion_dim: usize) -> Result<Self> {
        if replay.dims() != Some((grid_dim, fusion_dim)) {
            return Err(CoreError::invalid("transition dimensions differ from the network"));
        }
        let n = idx.len();
        let mut b = Batch {
            grid: Array2::zeros((n, grid_dim)),
            fusion: Array2::zeros((n, fusion_dim)),
            next_grid: Array2::zeros((n, grid_dim)),
            next_fusion: Array2::zeros((n, fusion_dim)),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
        };
        for (j, &i) in idx.iter().enumerate() {
            let (g, ng) = replay.grid_words(i);
            let (f, nf) = replay.fusion(i);
            flatten_words(g, grid_dim, b.grid.row_mut(j).as_slice_mut().expect("row-major"));
            flatten_words(ng, grid_dim, b.next_grid.row_mut(j).as_slice_mut().expect("row-major"));
            b.fusion.row_mut(j).as_slice_mut().expect("row-major").copy_from_slice(f);
            b.next_fusion.row_mut(j).as_slice_mut().expect("row-major").copy_from_slice(nf);
            b.actions.push(replay.action(i));
            b.rewards.push(replay.reward(i));
            b.terminal.push(replay.is_terminal(i));
        }
        Ok(b)
    }
}

/// Mean squared error between `Q(s_j, a_j)` and `y_j`, with its gradient.
pub fn mse_loss_and_grad(
    net: &QNetwork,
    grid: &Array2<f64>,
    fusion: &Array2<f64>,
    actions: &[usize],
    y: &[f64],
) -> Result<(f64, Vec<Dense>)> {
    let (q, cache) = net.forward_cached(grid.view(), fusion.view())?;
    let n = actions.len() as f64;
    let mut d = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (j, (&a, &yj)) in actions.iter().zip(y).enumerate() {
        if a >= q.ncols() {
            return Err(CoreError::invalid(format!("action {a} outside the network output")));
        }
        let e = q[[j, a]] - yj;
        loss += e * e;
        d[[j, a]] = 2.0 * e / n;
    }
    Ok((loss / n, net.backward(&cache, &d)))
}

pub struct DdqnAgent {
    pub cfg: TrainConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub replay: ReplayBuffer,
    optimizer: Optimizer,
    pub rng: ChaCha8Rng,
}

impl DdqnAgent {
    pub fn new(cfg: TrainConfig, online: QNetwork, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(DdqnAgent {
            optimizer: Optimizer::new(cfg.optimizer_config(), &online),
            target: online.clone(),
            replay: ReplayBuffer::new(cfg.buffer_capacity)?,
            online,
            cfg,
            rng,
        })
    }

    pub fn act(&mut self, grid: &[f64], fusion: &[f64], epsilon: f64) -> Result<usize> {
        act(&self.online, grid, fusion, epsilon, &mut self.rng)
    }

    pub fn targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let q_on = self.online.forward_batch(batch.next_grid.view(), batch.next_fusion.view())?;
        let q_tg = self.target.forward_batch(batch.next_grid.view(), batch.next_fusion.view())?;
        Ok((0..batch.actions.len())
            .map(|j| {
                ddqn_target(
                    batch.rewards[j],
                    batch.terminal[j],
                    &q_on.row(j).to_vec(),
                    &q_tg.row(j).to_vec(),
                    self.cfg.gamma,
                )
            })
            .collect())
    }

    /// One gradient step on a fresh minibatch. `Ok(None)` while the buffer
    /// holds too few records.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let need = self.cfg.batch_size.max(self.cfg.learning_starts);
        if self.replay.len() < need {
            return Ok(None);
        }
        let Some(idx) = self.replay.sample_indices(self.cfg.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let batch = Batch::gather(
            &self.replay,
            &idx,
            self.online.spec.grid_input_dim,
            self.online.spec.fusion_input_dim,
        )?;
        let y = self.targets(&batch)?;
        let (loss, mut grads) = mse_loss_and_grad(&self.online, &batch.grid, &batch.fusion, &batch.actions, &y)?;
        self.optimizer.step(&mut self.online, &mut grads);
        Ok(Some(loss))
    }

    /// Copies the online weights into the target on multiples of N.
    pub fn sync_target(&mut self, step: u64) -> bool {
        if step % self.cfg.target_sync_n == 0 {
            self.target.clone_from(&self.online);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn epsilon_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epsilon(0), 1.0);
        assert_eq!(cfg.epsilon(50_000), 0.05);
        assert_eq!(cfg.epsilon(90_000), 0.05);
        assert!((cfg.epsilon(25_000) - 0.525).abs() < 1e-15);
    }

    #[test]
    fn targets() {
        assert_eq!(ddqn_target(-10.0, true, &[1.0, 2.0], &[5.0, 0.0], 0.9), -10.0);
        assert_eq!(ddqn_target(0.3, false, &[1.0, 2.0], &[5.0, 7.0], 0.0), 0.3);
        // Online picks action 1, target values it at 0; DQN would give 5.5.
        assert_eq!(ddqn_target(1.0, false, &[1.0, 2.0], &[5.0, 0.0], 0.9), 1.0);
    }

    #[test]
    fn greedy_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(act_on_q(&[0.1, 0.9, 0.3], 0.0, &mut rng), 1);
        assert_eq!(act_on_q(&[0.5, 0.5], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            counts[act_on_q(&[0.0, 9.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
