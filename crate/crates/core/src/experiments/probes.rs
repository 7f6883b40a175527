use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{median, ExperimentReport, RunRecord};
use crate::data::TrajectoryDataset;
use crate::error::{check_len, Error, Result};
use crate::nn::AttentionModule;
use crate::solvers::{
    combine_into, integration_term_into, module_input_into, rollout_from, IntegrationScheme, StepMode, Stepper,
    Workspace,
};
use crate::systems::OdeSystem;

pub const DEFAULT_EPSILON0: f64 = 1e-8;

/// Separation of two rollouts started `epsilon0` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationProbe {
    pub epsilon0: f64,
    /// `ε_0 .. ε_N`.
    pub epsilon: Vec<f64>,
    /// `ε_{t+1} / ε_t`, or 0 where `ε_t = 0`.
    pub factors: Vec<f64>,
    /// First step at which either rollout failed.
    pub exploded_at: Option<usize>,
}

impl PerturbationProbe {
    pub fn max_factor(&self) -> f64 {
        self.factors.iter().copied().fold(0.0, f64::max)
    }
}

/// Paired rollouts from `u0` and `u0 + epsilon0 * (1, .., 1) / sqrt(d)`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_probe(
    module: Option<&AttentionModule>,
    system: &OdeSystem,
    scheme: IntegrationScheme,
    mode: StepMode,
    dt: f64,
    u0: &[f64],
    epsilon0: f64,
    steps: usize,
) -> Result<PerturbationProbe> {
    if !(epsilon0 >= 0.0) || !epsilon0.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon0 must be >= 0, got {epsilon0}")));
    }
    let d = u0.len();
    let shift = epsilon0 / (d as f64).sqrt();
    let moved: Vec<f64> = u0.iter().map(|v| v + shift).collect();
    let a = rollout_from(u0, scheme, system, dt, steps, mode, module)?;
    let b = rollout_from(&moved, scheme, system, dt, steps, mode, module)?;
    let exploded_at = match (a.exploded_at, b.exploded_at) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    let last = exploded_at.map_or(steps, |e| e - 1);
    let epsilon: Vec<f64> = (0..=last)
        .map(|t| {
            a.row(t)
                .iter()
                .zip(b.row(t))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let factors = epsilon
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect();
    Ok(PerturbationProbe {
        epsilon0,
        epsilon,
        factors,
        exploded_at,
    })
}

/// Largest singular value of a row-major `n x n` matrix, from the cyclic
/// Jacobi eigenvalues of `M^T M`.
pub fn spectral_norm(m: &[f64], n: usize) -> Result<f64> {
    check_len("matrix entries", n * n, m.len())?;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum();
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| b[i * n + j] * b[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| b[i * n + i] * b[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = b[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (b[q * n + q] - b[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b[k * n + p];
                    let bkq = b[k * n + q];
                    b[k * n + p] = c * bkp - s * bkq;
                    b[k * n + q] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[p * n + k];
                    let bqk = b[q * n + k];
                    b[p * n + k] = c * bpk - s * bqk;
                    b[q * n + k] = s * bpk + c * bqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| b[i * n + i]).fold(0.0, f64::max).sqrt())
}

/// `||I + dt A||_2` for a linear system: the worst one-step growth of a
/// perturbation under classic Euler.
pub fn euler_growth_bound(system: &OdeSystem, dt: f64) -> Result<f64> {
    let n = system.dim();
    let mut m = system
        .linear_matrix()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not linear", system.id())))?;
    m.iter_mut().for_each(|v| *v *= dt);
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    spectral_norm(&m, n)
}

/// Largest `|normalized step - additive step with (S dt) * Q|` over every
/// state of `dataset`.
pub fn normalized_identity_error(
    module: &AttentionModule,
    dataset: &TrajectoryDataset,
    scheme: IntegrationScheme,
) -> Result<f64> {
    let dim = dataset.dim;
    let dt = dataset.dt_coarse;
    let mut stepper = Stepper::new(scheme, &dataset.system, dt, StepMode::NormalizedMultiplicative, Some(module))?;
    let mut ws = Workspace::new(dim);
    let (mut s, mut input) = (vec![0.0; dim], Vec::with_capacity(dim));
    let (mut normalized, mut additive) = (vec![0.0; dim], vec![0.0; dim]);
    let mut worst = 0.0f64;
    for chunk in dataset.data.chunks(dim) {
        stepper.step_into(chunk, &mut normalized)?;
        integration_term_into(scheme, &dataset.system, chunk, dt, &mut ws, &mut s)?;
        module_input_into(StepMode::NormalizedMultiplicative, module, chunk, &s, dt, &mut input);
        let q = module.forward(&input)?;
        let comp: Vec<f64> = s.iter().zip(&q).map(|(s, q)| (s * dt) * q).collect();
        combine_into(StepMode::Additive, chunk, &s, dt, Some(&comp), &mut additive);
        for (a, b) in normalized.iter().zip(&additive) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Median wall time per step of a `steps`-step rollout over `repeats`
/// timed runs, after one untimed warm-up run.
#[allow(clippy::too_many_arguments)]
pub fn time_rollout(
    module: Option<&AttentionModule>,
    scheme: IntegrationScheme,
    mode: StepMode,
    system: &OdeSystem,
    dt: f64,
    u0: &[f64],
    steps: usize,
    repeats: usize,
) -> Result<f64> {
    let dim = system.dim();
    check_len("timing state", dim, u0.len())?;
    let mut stepper = Stepper::new(scheme, system, dt, mode, module)?;
    // A diverged state restarts from u0 so unstable arms are still timed.
    let mut run = || -> f64 {
        let (mut u, mut next) = (u0.to_vec(), vec![0.0; dim]);
        let start = Instant::now();
        for _ in 0..steps {
            if stepper.step_into(&u, &mut next).is_err() || !next.iter().all(|v| v.is_finite()) {
                next.copy_from_slice(u0);
            }
            std::mem::swap(&mut u, &mut next);
        }
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(&u);
        elapsed / steps as f64
    };
    run();
    let times: Vec<f64> = (0..repeats.max(1)).map(|_| run()).collect();
    Ok(median(&times))
}

/// Global error at the end of the test horizon for `dt_c` and `dt_c / 2`,
/// with and without the trained module.
pub fn convergence_probe(
    module: &AttentionModule,
    test: &TrajectoryDataset,
    scheme: IntegrationScheme,
    mode: StepMode,
    training_loss: f64,
) -> Result<ExperimentReport> {
    if test.is_empty() {
        return Err(Error::Config("convergence probe needs test trajectories".into()));
    }
    let n = test.n_steps();
    let dt = test.dt_coarse;
    let end_error = |module: Option<&AttentionModule>, mode: StepMode, h: f64, steps: usize| -> Result<f64> {
        let mut total = 0.0;
        for i in 0..test.len() {
            let traj = rollout_from(test.initial_state(i), scheme, &test.system, h, steps, mode, module)?;
            total += traj
                .last()
                .iter()
                .zip(test.row(i, n))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
        Ok(total / test.len() as f64)
    };
    let mut report = ExperimentReport::new(
        "convergence",
        serde_json::json!({
            "system": test.system, "scheme": scheme, "mode": mode,
            "dt_coarse": dt, "t_end": test.t_end(), "n_test": test.len(),
        }),
    );
    report.runs.push(
        RunRecord::new("classic", 0)
            .metric("error_dt", end_error(None, StepMode::Classic, dt, n)?)
            .metric("error_half_dt", end_error(None, StepMode::Classic, dt / 2.0, 2 * n)?),
    );
    report.runs.push(
        RunRecord::new(mode.name(), 0)
            .metric("error_dt", end_error(Some(module), mode, dt, n)?)
            .metric("error_half_dt", end_error(Some(module), mode, dt / 2.0, 2 * n)?)
            .metric("delta", training_loss)
            .metric("sqrt_delta", training_loss.max(0.0).sqrt()),
    );
    report.notes.push(
        "errors are mean Euclidean end-state errors; the bound alpha*dt + beta*sqrt(delta) is checked in shape only, \
         alpha and beta are not computed (they need the Lipschitz constant and second-derivative bound)"
            .into(),
    );
    report.aggregate();
    Ok(report)
}

/// Steps per second of classic fine, classic coarse, and corrected coarse
/// stepping, and the end-to-end time to cover the test horizon.
#[allow(clippy::too_many_arguments)]
pub fn speed_benchmark(
    module: Option<&AttentionModule>,
    system: &OdeSystem,
    scheme: IntegrationScheme,
    mode: StepMode,
    dt_coarse: f64,
    dt_fine: f64,
    t_end: f64,
    u0: &[f64],
    steps: usize,
    repeats: usize,
) -> Result<ExperimentReport> {
    if steps < 1000 {
        return Err(Error::Config(format!("speed benchmark needs >= 1000 steps, got {steps}")));
    }
    let k = crate::data::integral_ratio(dt_coarse, dt_fine, "dt_coarse / dt_fine")?;
    let n_coarse = crate::data::integral_ratio(t_end, dt_coarse, "t_end / dt_coarse")?;
    let mut report = ExperimentReport::new(
        "speed",
        serde_json::json!({
            "system": system, "scheme": scheme, "mode": mode, "dt_coarse": dt_coarse,
            "dt_fine": dt_fine, "t_end": t_end, "steps": steps, "repeats": repeats,
        }),
    );
    let arms: Vec<(String, Option<&AttentionModule>, StepMode, f64, usize)> = {
        let mut v = vec![
            ("classic_fine".to_string(), None, StepMode::Classic, dt_fine, n_coarse * k),
            ("classic_coarse".to_string(), None, StepMode::Classic, dt_coarse, n_coarse),
        ];
        if mode.needs_module() {
            v.push((format!("{}_coarse", mode.name()), module, mode, dt_coarse, n_coarse));
        }
        v
    };
    let mut horizon = Vec::new();
    for (arm, m, mode, dt, horizon_steps) in arms {
        let per_step = time_rollout(m, scheme, mode, system, dt, u0, steps, repeats)?;
        horizon.push(per_step * horizon_steps as f64);
        report.runs.push(
            RunRecord::new(&arm, 0)
                .metric("horizon_steps", horizon_steps as f64)
                .timing("seconds_per_step", per_step)
                .timing("steps_per_second", 1.0 / per_step)
                .timing("horizon_seconds", per_step * horizon_steps as f64),
        );
    }
    for (run, &secs) in report.runs.iter_mut().zip(&horizon) {
        run.timing.insert("speedup_vs_fine".into(), horizon[0] / secs);
    }
    report.notes.push(format!("k = dt_coarse / dt_fine = {k}"));
    report.aggregate();
    Ok(report)
}
