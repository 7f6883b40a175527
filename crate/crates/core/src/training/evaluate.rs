use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::unroll::loss_from_rows;
use crate::data::TrajectoryDataset;
use crate::error::{check_len, Error, Result};
use crate::nn::AttentionModule;
use crate::solvers::{rollout_from, IntegrationScheme, StepMode, Trajectory};

/// Full-rollout error over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean over trajectories of `(1/N) sum_t ||û_t - u_t||^2`.
    pub mse: f64,
    pub per_trajectory: Vec<f64>,
    /// Rollouts that hit a non-finite value (scored on their frozen states).
    pub exploded: usize,
}

impl Evaluation {
    pub fn explosion_rate(&self) -> f64 {
        if self.per_trajectory.is_empty() {
            0.0
        } else {
            self.exploded as f64 / self.per_trajectory.len() as f64
        }
    }
}

/// Scores `rollout(u_0^i)` against each trajectory of `dataset`, with the
/// rollout supplied by the caller.
pub fn evaluate_with<F>(dataset: &TrajectoryDataset, rollout: F) -> Result<Evaluation>
where
    F: Fn(usize, &[f64]) -> Result<Trajectory> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let scored: Vec<Result<(f64, bool)>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let truth = dataset.trajectory(i);
            let traj = rollout(i, dataset.initial_state(i))?;
            check_len("rollout length", truth.len(), traj.states.len())?;
            Ok((loss_from_rows(&traj.states, truth, dataset.dim, 1.0)?, traj.is_exploded()))
        })
        .collect();
    let mut per_trajectory = Vec::with_capacity(scored.len());
    let mut exploded = 0;
    for s in scored {
        let (mse, blew_up) = s?;
        per_trajectory.push(mse);
        exploded += usize::from(blew_up);
    }
    let mse = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
    Ok(Evaluation {
        mse,
        per_trajectory,
        exploded,
    })
}

/// Test-set MSE of the (possibly corrected) solver at the dataset's coarse
/// step, over the full horizon of the dataset.
pub fn evaluate_mse(
    module: Option<&AttentionModule>,
    scheme: IntegrationScheme,
    mode: StepMode,
    dataset: &TrajectoryDataset,
) -> Result<Evaluation> {
    let n = dataset.n_steps();
    evaluate_with(dataset, |_, u0| {
        rollout_from(u0, scheme, &dataset.system, dataset.dt_coarse, n, mode, module)
    })
}

/// Uncorrected coarse-solver baseline.
pub fn baseline_mse(scheme: IntegrationScheme, dataset: &TrajectoryDataset) -> Result<Evaluation> {
    evaluate_mse(None, scheme, StepMode::Classic, dataset)
}
