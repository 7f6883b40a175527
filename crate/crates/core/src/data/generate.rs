use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Split, TrajectoryDataset};
use super::sampler::InitSampler;
use crate::error::{check_len, Error, Result};
use crate::solvers::{IntegrationScheme, StepMode, Stepper};
use crate::systems::OdeSystem;

/// Attempts per trajectory before generation gives up.
pub const MAX_ATTEMPTS: usize = 64;

/// Echo of the generation parameters, written next to dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub system: OdeSystem,
    pub split: Split,
    pub n_traj: usize,
    pub t_end: f64,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub stride: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub generator: IntegrationScheme,
    pub rejected: usize,
    pub sampler: InitSampler,
}

/// `numerator / denominator` as a positive integer, or a config error naming
/// both quantities.
pub fn integral_ratio(numerator: f64, denominator: f64, what: &str) -> Result<usize> {
    if !(numerator > 0.0 && denominator > 0.0) || !numerator.is_finite() || !denominator.is_finite() {
        return Err(Error::Config(format!("{what}: both values must be positive")));
    }
    let ratio = numerator / denominator;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::Config(format!("{what} = {ratio} is not a positive integer")));
    }
    Ok(k as usize)
}

/// Integrates one trajectory with RK4 at `dt_fine`, keeping every
/// `stride`-th state. Returns `None` if it leaves the finite domain.
pub(crate) fn integrate_subsampled(
    system: &OdeSystem,
    u0: &[f64],
    dt_fine: f64,
    stride: usize,
    n_steps: usize,
) -> Result<Option<Vec<f64>>> {
    let dim = system.dim();
    let mut stepper = Stepper::new(IntegrationScheme::Rk4, system, dt_fine, StepMode::Classic, None)?;
    let mut out = Vec::with_capacity((n_steps + 1) * dim);
    out.extend_from_slice(u0);
    let mut current = u0.to_vec();
    let mut next = vec![0.0; dim];
    for _ in 0..n_steps {
        for _ in 0..stride {
            match stepper.step_into(&current, &mut next) {
                Ok(()) => {}
                Err(e) if e.is_numerical() => return Ok(None),
                Err(e) => return Err(e),
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            std::mem::swap(&mut current, &mut next);
        }
        out.extend_from_slice(&current);
    }
    Ok(Some(out))
}

/// Generates `n_traj` ground-truth trajectories on the coarse grid.
///
/// Each trajectory is integrated with classic RK4 at `dt_fine` and
/// subsampled every `dt_coarse / dt_fine` steps up to `t_end`. Trajectories
/// that explode are redrawn from the same per-trajectory stream and counted
/// in the report.
pub fn generate_dataset(
    system: &OdeSystem,
    sampler: &InitSampler,
    n_traj: usize,
    dt_fine: f64,
    dt_coarse: f64,
    t_end: f64,
    split: Split,
) -> Result<(TrajectoryDataset, GenerationReport)> {
    system.validate()?;
    sampler.validate()?;
    check_len("sampler dimension", system.dim(), sampler.dim())?;
    let stride = integral_ratio(dt_coarse, dt_fine, "dt_coarse / dt_fine")?;
    let n_steps = integral_ratio(t_end, dt_coarse, "t_end / dt_coarse")?;

    let results: Vec<Result<(Vec<f64>, usize)>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = sampler.stream(i as u64);
            for attempt in 0..MAX_ATTEMPTS {
                let u0 = sampler.draw(&mut rng);
                if let Some(rows) = integrate_subsampled(system, &u0, dt_fine, stride, n_steps)? {
                    return Ok((rows, attempt));
                }
            }
            Err(Error::Config(format!(
                "trajectory {i} exploded in all {MAX_ATTEMPTS} attempts"
            )))
        })
        .collect();

    let dim = system.dim();
    let mut data = Vec::with_capacity(n_traj * (n_steps + 1) * dim);
    let mut rejected = 0;
    for result in results {
        let (rows, attempts) = result?;
        rejected += attempts;
        data.extend_from_slice(&rows);
    }
    if rejected > 0 {
        warn!("{} {split}: rejected {rejected} exploded generations", system.id());
    }
    info!(
        "generated {n_traj} {} {split} trajectories: N = {n_steps}, d = {dim}, stride = {stride}",
        system.id()
    );
    let dataset = TrajectoryDataset {
        system: system.clone(),
        split,
        dt_coarse,
        dt_fine,
        seed: sampler.seed,
        dim,
        rows: n_steps + 1,
        data,
    };
    let report = GenerationReport {
        system: system.clone(),
        split,
        n_traj,
        t_end,
        dt_fine,
        dt_coarse,
        stride,
        n_steps,
        seed: sampler.seed,
        generator: IntegrationScheme::Rk4,
        rejected,
        sampler: sampler.clone(),
    };
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(integral_ratio(0.2, 1e-3, "k").unwrap(), 200);
        assert_eq!(integral_ratio(20.0, 0.2, "n").unwrap(), 100);
        assert!(integral_ratio(0.15, 0.1, "k").is_err());
        assert!(integral_ratio(0.05, 0.1, "k").is_err());
        assert!(integral_ratio(0.1, 0.0, "k").is_err());
    }

    #[test]
    fn harmonic_ground_truth_matches_closed_form() {
        let sys = OdeSystem::harmonic(1.0);
        let sampler = InitSampler::for_system(&sys, 3);
        let (ds, report) = generate_dataset(&sys, &sampler, 4, 1e-3, 1e-1, 1.0, Split::Train).unwrap();
        assert_eq!(ds.rows, 11);
        assert_eq!(report.stride, 100);
        for i in 0..ds.len() {
            let u0 = ds.initial_state(i).to_vec();
            for t in 0..ds.rows {
                let exact = sys.exact_solution(&u0, t as f64 / 10.0).unwrap();
                for (a, b) in ds.row(i, t).iter().zip(&exact) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_trajectories_is_valid() {
        let sys = OdeSystem::spring_mass(2);
        let sampler = InitSampler::for_system(&sys, 0);
        let (ds, _) = generate_dataset(&sys, &sampler, 0, 1e-3, 0.2, 1.0, Split::Test).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.rows, 6);
    }

    #[test]
    fn bad_ratio_is_config_error() {
        let sys = OdeSystem::spring_mass(2);
        let sampler = InitSampler::for_system(&sys, 0);
        let err = generate_dataset(&sys, &sampler, 1, 3e-3, 0.2, 1.0, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Config(msg) if msg.contains("dt_coarse / dt_fine")));
    }
}
