//! Ego-centric occupancy grid aligned with the ego heading.
//!
//! Rows run forward from the ego reference point (row 0 nearest), columns
//! run from right to left with the lane axis between the two middle
//! columns.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::scenario::ActorSnapshot;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Lateral cell count.
    pub width: usize,
    /// Forward cell count.
    pub height: usize,
    pub cell_size: f64,
    /// Disc radius used as actor footprint.
    pub actor_radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 16,
            height: 32,
            cell_size: 1.0,
            actor_radius: 0.4,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::config("grid.width", "grid dimensions must be positive"));
        }
        if !(self.cell_size > 0.0) {
            return Err(CoreError::config("grid.cell_size", "must be > 0"));
        }
        if !(self.actor_radius >= 0.0) {
            return Err(CoreError::config("grid.actor_radius", "must be >= 0"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }
}

/// Occupancy bits packed 64 per word, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Ego-frame coordinates (forward, left) of the outer corner of cell (0, 0).
    pub origin: (f64, f64),
    words: Vec<u64>,
}

impl OccupancyGrid {
    pub fn empty(spec: &GridSpec) -> Self {
        let n = spec.cells();
        OccupancyGrid {
            width: spec.width,
            height: spec.height,
            cell_size: spec.cell_size,
            origin: (0.0, -(spec.width as f64) * spec.cell_size / 2.0),
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let i = self.index(row, col);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        let i = self.index(row, col);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn occupied_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Row-major 0/1 values.
    pub fn flatten_into(&self, out: &mut [f64]) {
        flatten_words(&self.words, self.len(), out);
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Replaces the cell bits; `words` must come from a grid of the same shape.
    pub fn set_words(&mut self, words: &[u64]) -> Result<()> {
        if words.len() != self.words.len() {
            return Err(CoreError::invalid("grid word count differs"));
        }
        self.words.copy_from_slice(words);
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.flatten_into(&mut v);
        v
    }
}

/// Unpacks the first `cells` bits of `words` as row-major 0/1 values.
pub fn flatten_words(words: &[u64], cells: usize, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate().take(cells) {
        *slot = (words[i / 64] >> (i % 64) & 1) as f64;
    }
}

/// Marks every cell that an actor's disc footprint overlaps.
pub fn build_grid(ego: &VehicleState, actors: &[ActorSnapshot], spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(spec);
    let (sin_h, cos_h) = ego.psi.sin_cos();
    let cs = spec.cell_size;
    let left0 = grid.origin.1;
    let r = spec.actor_radius;

    for a in actors {
        let (dx, dy) = (a.x - ego.x, a.y - ego.y);
        let fwd = dx * cos_h + dy * sin_h;
        let left = -dx * sin_h + dy * cos_h;

        let row_lo = ((fwd - r) / cs).floor().max(0.0);
        let row_hi = ((fwd + r) / cs).floor().min(spec.height as f64 - 1.0);
        let col_lo = ((left - r - left0) / cs).floor().max(0.0);
        let col_hi = ((left + r - left0) / cs).floor().min(spec.width as f64 - 1.0);
        if row_lo > row_hi || col_lo > col_hi {
            continue;
        }
        for row in row_lo as usize..=row_hi as usize {
            for col in col_lo as usize..=col_hi as usize {
                let (f0, f1) = (row as f64 * cs, (row + 1) as f64 * cs);
                let (l0, l1) = (left0 + col as f64 * cs, left0 + (col + 1) as f64 * cs);
                let nf = fwd.clamp(f0, f1);
                let nl = left.clamp(l0, l1);
                let d2 = (fwd - nf).powi(2) + (left - nl).powi(2);
                if d2 < r * r || (r == 0.0 && d2 == 0.0) {
                    grid.set(row, col);
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ped(x: f64, y: f64) -> ActorSnapshot {
        ActorSnapshot {
            id: 1,
            x,
            y,
            heading: 0.0,
            speed: 1.4,
        }
    }

    #[test]
    fn no_actors_is_empty() {
        let g = build_grid(&VehicleState::default(), &[], &GridSpec::default());
        assert_eq!(g.occupied_count(), 0);
        assert_eq!(g.len(), 512);
    }

    #[test]
    fn actor_dead_ahead() {
        let spec = GridSpec::default();
        let ego = VehicleState {
            x: 10.0,
            ..Default::default()
        };
        let g = build_grid(&ego, &[ped(10.0 + 12.5, 0.0)], &spec);
        // Disc straddles the lane axis: both middle columns of row 12.
        assert!(g.get(12, spec.width / 2));
        assert!(g.get(12, spec.width / 2 - 1));
        assert_eq!(g.occupied_count(), 2);
    }

    #[test]
    fn actor_behind_is_invisible() {
        let g = build_grid(&VehicleState::default(), &[ped(-5.0, 0.0)], &GridSpec::default());
        assert_eq!(g.occupied_count(), 0);
    }

    #[test]
    fn rotates_with_heading() {
        let spec = GridSpec::default();
        let ego = VehicleState {
            psi: std::f64::consts::FRAC_PI_2,
            ..Default::default()
        };
        // Straight "up" in the world is dead ahead; 3.5 m to the world's
        // -x is 3.5 m to the ego's left.
        let g = build_grid(&ego, &[ped(-3.5, 5.5)], &spec);
        assert!(g.get(5, spec.width / 2 + 3));
    }

    #[test]
    fn flatten_matches_get() {
        let spec = GridSpec::default();
        let g = build_grid(&VehicleState::default(), &[ped(3.2, 2.7), ped(20.0, -5.1)], &spec);
        let flat = g.to_vec();
        for row in 0..spec.height {
            for col in 0..spec.width {
                assert_eq!(flat[row * spec.width + col] == 1.0, g.get(row, col));
            }
        }
        assert!(g.occupied_count() >= 2);
    }
}
