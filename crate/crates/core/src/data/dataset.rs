use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::OdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// `M` trajectories of `N + 1` states each, sampled on the coarse grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub system: OdeSystem,
    pub split: Split,
    pub dt_coarse: f64,
    pub dt_fine: f64,
    pub seed: u64,
    pub dim: usize,
    /// `N + 1`.
    pub rows: usize,
    /// `M * rows * dim` values, trajectory-major then row-major.
    pub data: Vec<f64>,
}

impl TrajectoryDataset {
    pub fn empty(system: OdeSystem, split: Split, dt_coarse: f64, dt_fine: f64, seed: u64, rows: usize) -> Self {
        let dim = system.dim();
        Self {
            system,
            split,
            dt_coarse,
            dt_fine,
            seed,
            dim,
            rows,
            data: Vec::new(),
        }
    }

    /// Number of trajectories `M`.
    pub fn len(&self) -> usize {
        if self.rows == 0 || self.dim == 0 {
            0
        } else {
            self.data.len() / (self.rows * self.dim)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coarse steps per trajectory, `N`.
    pub fn n_steps(&self) -> usize {
        self.rows.saturating_sub(1)
    }

    pub fn t_end(&self) -> f64 {
        self.n_steps() as f64 * self.dt_coarse
    }

    /// `dt_coarse / dt_fine`.
    pub fn stride(&self) -> usize {
        (self.dt_coarse / self.dt_fine).round() as usize
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        let n = self.rows * self.dim;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn initial_state(&self, i: usize) -> &[f64] {
        &self.trajectory(i)[..self.dim]
    }

    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        &self.trajectory(i)[t * self.dim..(t + 1) * self.dim]
    }

    /// Mean of `u^2` over every stored value.
    pub fn mean_square(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.rows * self.dim);
        for &i in indices {
            data.extend_from_slice(self.trajectory(i));
        }
        Self {
            data,
            system: self.system.clone(),
            ..*self
        }
    }

    /// Fixed permutation of trajectory indices for the given seed.
    pub fn shuffled_order(&self, shuffle_seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        order
    }

    /// Keeps the first `ceil(fraction * M)` trajectories of the seeded
    /// permutation. Subsets for smaller fractions are prefixes of those for
    /// larger ones.
    pub fn reduction_subset(&self, fraction: f64, shuffle_seed: u64) -> Result<Self> {
        Ok(self.subset(&self.reduction_indices(fraction, shuffle_seed)?))
    }

    pub fn reduction_indices(&self, fraction: f64, shuffle_seed: u64) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "data fraction must be in (0, 1], got {fraction}"
            )));
        }
        let m = self.len();
        let keep = ((fraction * m as f64) - 1e-9).ceil().max(if m > 0 { 1.0 } else { 0.0 }) as usize;
        let mut order = self.shuffled_order(shuffle_seed);
        order.truncate(keep.min(m));
        Ok(order)
    }
}
