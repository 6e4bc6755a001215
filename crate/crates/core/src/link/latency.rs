//! Seeded delay, jitter and drop injection in virtual time.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub base_delay_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base_delay_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            seed: 1,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_delay_ms >= 0.0 && self.base_delay_ms.is_finite()) {
            return Err(CoreError::config("link.base_delay_ms", "must be finite and >= 0"));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(CoreError::config("link.jitter_ms", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(CoreError::config(
                "link.drop_prob",
                "must lie in [0, 1); a value of 1 would starve the link",
            ));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.base_delay_ms == 0.0 && self.jitter_ms == 0.0 && self.drop_prob == 0.0
    }
}

/// One direction of a link. Release times never decrease, so messages
/// leave in the order they were sent.
#[derive(Debug, Clone)]
pub struct LatencyChannel<T> {
    model: LatencyModel,
    rng: ChaCha8Rng,
    queue: VecDeque<(u64, T)>,
    last_release_us: u64,
    pub dropped: u64,
}

impl<T> LatencyChannel<T> {
    pub fn new(model: LatencyModel) -> Result<Self> {
        model.validate()?;
        Ok(LatencyChannel {
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            model,
            queue: VecDeque::new(),
            last_release_us: 0,
            dropped: 0,
        })
    }

    /// Draws the fate of one message: `None` when dropped, otherwise its
    /// release time.
    pub fn schedule(&mut self, send_us: u64) -> Option<u64> {
        if self.model.drop_prob > 0.0 && self.rng.gen::<f64>() < self.model.drop_prob {
            self.dropped += 1;
            return None;
        }
        let jitter = if self.model.jitter_ms > 0.0 {
            self.rng.gen_range(-self.model.jitter_ms..=self.model.jitter_ms)
        } else {
            0.0
        };
        let delay_us = ((self.model.base_delay_ms + jitter) * 1000.0).max(0.0).round() as u64;
        let release = (send_us + delay_us).max(self.last_release_us);
        self.last_release_us = release;
        Some(release)
    }

    /// Returns false when the message was dropped.
    pub fn send(&mut self, send_us: u64, item: T) -> bool {
        match self.schedule(send_us) {
            Some(release) => {
                self.queue.push_back((release, item));
                true
            }
            None => false,
        }
    }

    /// Next message whose release time has come.
    pub fn recv_ready(&mut self, now_us: u64) -> Option<(u64, T)> {
        if self.queue.front().is_some_and(|(r, _)| *r <= now_us) {
            self.queue.pop_front()
        } else {
            None
        }
    }

    pub fn next_release(&self) -> Option<u64> {
        self.queue.front().map(|(r, _)| *r)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_passes_through() {
        let mut ch = LatencyChannel::new(LatencyModel::default()).unwrap();
        for t in [0u64, 10, 10, 35] {
            assert!(ch.send(t, t));
        }
        let mut got = Vec::new();
        while let Some(m) = ch.recv_ready(u64::MAX) {
            got.push(m);
        }
        assert_eq!(got, vec![(0, 0), (10, 10), (10, 10), (35, 35)]);
    }

    #[test]
    fn constant_delay_shifts_time() {
        let model = LatencyModel {
            base_delay_ms: 20.0,
            ..Default::default()
        };
        let mut ch = LatencyChannel::<()>::new(model).unwrap();
        for t in (0..10).map(|k| k * 10_000) {
            assert_eq!(ch.schedule(t), Some(t + 20_000));
        }
    }

    #[test]
    fn starving_link_rejected() {
        let model = LatencyModel {
            drop_prob: 1.0,
            ..Default::default()
        };
        assert!(LatencyChannel::<()>::new(model).is_err());
    }

    #[test]
    fn jitter_keeps_order_and_is_seeded() {
        let model = LatencyModel {
            base_delay_ms: 5.0,
            jitter_ms: 4.0,
            drop_prob: 0.2,
            seed: 3,
        };
        let run = || {
            let mut ch = LatencyChannel::<()>::new(model).unwrap();
            (0..500).map(|k| ch.schedule(k * 1000)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let released: Vec<u64> = a.iter().flatten().copied().collect();
        assert!(released.windows(2).all(|w| w[0] <= w[1]));
        assert!(released.len() < 500 && released.len() > 300);
    }
}
