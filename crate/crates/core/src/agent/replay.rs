use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::grid::OccupancyGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub grid: OccupancyGrid,
    pub fusion: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_grid: OccupancyGrid,
    pub next_fusion: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring; once full, each push replaces the oldest record.
///
/// Records live in flat arrays sized on the first push, so pushing never
/// allocates. Per-record heap allocations kept alive for the whole run
/// fragment the allocator badly next to the minibatch temporaries.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    len: usize,
    next: usize,
    layout: Option<Layout>,
    grids: Vec<u64>,
    fusions: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Layout {
    template: OccupancyGrid,
    words: usize,
    fusion: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            len: 0,
            next: 0,
            layout: None,
            grids: Vec::new(),
            fusions: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Grid cells and fusion features per record, once known.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.layout.as_ref().map(|l| (l.template.len(), l.fusion))
    }

    /// Every record must share the shape of the first one.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let layout = self.layout.get_or_insert_with(|| Layout {
            template: t.grid.clone(),
            words: t.grid.words().len(),
            fusion: t.fusion.len(),
        });
        let same_grid = |g: &OccupancyGrid| {
            g.width == layout.template.width && g.height == layout.template.height && g.words().len() == layout.words
        };
        if !same_grid(&t.grid)
            || !same_grid(&t.next_grid)
            || t.fusion.len() != layout.fusion
            || t.next_fusion.len() != layout.fusion
        {
            return Err(CoreError::invalid("transition shape differs from the buffer"));
        }
        let (w, f) = (layout.words, layout.fusion);
        if self.len == 0 && self.grids.is_empty() {
            self.grids = vec![0; 2 * w * self.capacity];
            self.fusions = vec![0.0; 2 * f * self.capacity];
            self.actions = vec![0; self.capacity];
            self.rewards = vec![0.0; self.capacity];
            self.terminal = vec![false; self.capacity];
        }
        let i = self.next;
        self.grids[2 * w * i..2 * w * i + w].copy_from_slice(t.grid.words());
        self.grids[2 * w * i + w..2 * w * (i + 1)].copy_from_slice(t.next_grid.words());
        self.fusions[2 * f * i..2 * f * i + f].copy_from_slice(&t.fusion);
        self.fusions[2 * f * i + f..2 * f * (i + 1)].copy_from_slice(&t.next_fusion);
        self.actions[i] = t.action;
        self.rewards[i] = t.reward;
        self.terminal[i] = t.terminal;
        self.len = (self.len + 1).min(self.capacity);
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Distinct uniform indices, or `None` while fewer than `n` records exist.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        if self.len < n || n == 0 {
            return None;
        }
        Some(index::sample(rng, self.len, n).into_vec())
    }

    fn layout(&self) -> &Layout {
        self.layout.as_ref().expect("index checked against len")
    }

    pub fn action(&self, i: usize) -> usize {
        self.actions[i]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.terminal[i]
    }

    /// Packed grid words of record `i`: (state, next state).
    pub fn grid_words(&self, i: usize) -> (&[u64], &[u64]) {
        assert!(i < self.len, "record {i} out of range");
        let w = self.layout().words;
        self.grids[2 * w * i..2 * w * (i + 1)].split_at(w)
    }

    /// Fusion features of record `i`: (state, next state).
    pub fn fusion(&self, i: usize) -> (&[f64], &[f64]) {
        assert!(i < self.len, "record {i} out of range");
        let f = self.layout().fusion;
        self.fusions[2 * f * i..2 * f * (i + 1)].split_at(f)
    }

    /// Copy of record `i`.
    pub fn get(&self, i: usize) -> Transition {
        let (g, ng) = self.grid_words(i);
        let (f, nf) = self.fusion(i);
        let mut grid = self.layout().template.clone();
        let mut next_grid = grid.clone();
        grid.set_words(g).expect("same layout");
        next_grid.set_words(ng).expect("same layout");
        Transition {
            grid,
            fusion: f.to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_grid,
            next_fusion: nf.to_vec(),
            terminal: self.terminal[i],
        }
    }

    /// Records from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = Transition> + '_ {
        let split = if self.len < self.capacity { 0 } else { self.next };
        (split..self.len).chain(0..split).map(|i| self.get(i))
    }
}
