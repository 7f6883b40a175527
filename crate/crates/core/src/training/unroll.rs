use rand::Rng;

use crate::data::{add_noise, NoiseKind};
use crate::error::{check_len, Error, Result};
use crate::nn::{mlp_backward, AttentionModule, ForwardCache, GradientSet};
use crate::solvers::{combine_into, integration_term_into, module_input_into, IntegrationScheme, StepMode, Workspace};
use crate::solvers::Trajectory;
use crate::systems::OdeSystem;

/// Everything about a training unroll except the parameters and the data.
#[derive(Debug, Clone, Copy)]
pub struct UnrollSpec<'a> {
    pub system: &'a OdeSystem,
    pub scheme: IntegrationScheme,
    pub dt: f64,
    pub mode: StepMode,
    /// Integration terms from ground-truth states instead of the rollout.
    pub teacher_forcing: bool,
    pub noise_sigma: f64,
    pub noise_kind: NoiseKind,
    pub loss_scale: f64,
}

/// Record of one unrolled trajectory, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Unroll {
    pub dim: usize,
    /// `û_0 .. û_N`, row-major. `û_0` is the ground-truth initial state.
    pub states: Vec<f64>,
    /// `Ŝ_t` for each step `t < N`.
    pub s_hat: Vec<f64>,
    /// Network input for each step.
    pub inputs: Vec<f64>,
    /// Network output for each step.
    pub q: Vec<f64>,
    pub caches: Vec<ForwardCache>,
    /// Step at which the unroll failed numerically, if it did.
    pub exploded_at: Option<usize>,
}

impl Unroll {
    pub fn n_steps(&self) -> usize {
        self.s_hat.len() / self.dim.max(1)
    }

    pub fn is_exploded(&self) -> bool {
        self.exploded_at.is_some()
    }
}

/// `c_n (1/N) sum_{t=1..N} ||û_t - u_t||^2` over `(N + 1) x d` row-major
/// arrays; row 0 is excluded.
pub fn loss_from_rows(predicted: &[f64], truth: &[f64], dim: usize, loss_scale: f64) -> Result<f64> {
    check_len("loss rows", truth.len(), predicted.len())?;
    if dim == 0 || truth.len() % dim != 0 || truth.len() < 2 * dim {
        return Err(Error::DimensionMismatch {
            context: "loss needs at least two rows".into(),
            expected: 2 * dim,
            actual: truth.len(),
        });
    }
    let n = truth.len() / dim - 1;
    let sum: f64 = predicted[dim..]
        .iter()
        .zip(&truth[dim..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(loss_scale * sum / n as f64)
}

/// `R_e` between two trajectories on the same grid.
pub fn compute_loss(predicted: &Trajectory, truth: &Trajectory, loss_scale: f64) -> Result<f64> {
    check_len("trajectory dimension", truth.dim, predicted.dim)?;
    loss_from_rows(&predicted.states, &truth.states, truth.dim, loss_scale)
}

/// Runs the training-time recurrence over one ground-truth trajectory.
///
/// With teacher forcing, `Ŝ_t` and the network input come from the
/// ground-truth `u_t`; otherwise from `û_t`. Noise (if any) is added to `û_t`
/// before each step. Numerical failures end the unroll early and are
/// reported through `exploded_at`.
pub fn unroll<R: Rng + ?Sized>(
    module: &AttentionModule,
    spec: &UnrollSpec<'_>,
    truth: &[f64],
    rng: &mut R,
) -> Result<Unroll> {
    let dim = spec.system.dim();
    check_len("module dimension", dim, module.dim)?;
    if truth.len() % dim != 0 || truth.len() < 2 * dim {
        return Err(Error::DimensionMismatch {
            context: "training trajectory needs at least two rows".into(),
            expected: 2 * dim,
            actual: truth.len(),
        });
    }
    let n = truth.len() / dim - 1;
    let mut out = Unroll {
        dim,
        states: Vec::with_capacity(truth.len()),
        s_hat: Vec::with_capacity(n * dim),
        inputs: Vec::with_capacity(n * dim),
        q: Vec::with_capacity(n * dim),
        caches: Vec::with_capacity(n),
        exploded_at: None,
    };
    out.states.extend_from_slice(&truth[..dim]);
    let mut ws = Workspace::new(dim);
    let mut current = truth[..dim].to_vec();
    let mut s_hat = vec![0.0; dim];
    let mut input = Vec::with_capacity(dim);
    let mut next = vec![0.0; dim];
    for t in 0..n {
        if spec.noise_sigma > 0.0 {
            add_noise(spec.noise_kind, spec.noise_sigma, &mut current, rng);
        }
        let basis: &[f64] = if spec.teacher_forcing { &truth[t * dim..(t + 1) * dim] } else { &current };
        let mut cache = ForwardCache::default();
        let stepped = integration_term_into(spec.scheme, spec.system, basis, spec.dt, &mut ws, &mut s_hat)
            .and_then(|()| {
                module_input_into(spec.mode, module, basis, &s_hat, spec.dt, &mut input);
                module.forward_cached(&input, &mut cache)
            });
        let q = match stepped {
            Ok(q) => q,
            Err(e) if e.is_numerical() => {
                out.exploded_at = Some(t + 1);
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        combine_into(spec.mode, &current, &s_hat, spec.dt, Some(&q), &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            out.exploded_at = Some(t + 1);
            return Ok(out);
        }
        out.s_hat.extend_from_slice(&s_hat);
        out.inputs.extend_from_slice(&input);
        out.q.extend_from_slice(&q);
        out.caches.push(cache);
        out.states.extend_from_slice(&next);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(out)
}

/// Accumulates `dR_e/dphi` of a complete unroll into `grads` and returns
/// `R_e`.
///
/// `dû_{t'}/dQ_t` is the identity (additive modes) or `diag(Ŝ_t dt)`
/// (multiplicative modes) for every `t' > t`, so the upstream gradient of
/// step `t` is a suffix sum of `dR_e/dû`. Nothing flows through `f` or
/// through the network input.
pub fn backward(
    module: &AttentionModule,
    spec: &UnrollSpec<'_>,
    record: &Unroll,
    truth: &[f64],
    grads: &mut GradientSet,
) -> Result<f64> {
    if record.is_exploded() {
        return Err(Error::InvalidArgument("cannot backpropagate an exploded unroll".into()));
    }
    let dim = record.dim;
    let loss = loss_from_rows(&record.states, truth, dim, spec.loss_scale)?;
    let n = record.n_steps();
    let coef = 2.0 * spec.loss_scale / n as f64;
    let mut suffix = vec![0.0; dim];
    let mut upstream = vec![0.0; dim];
    for t in (0..n).rev() {
        let row = (t + 1) * dim;
        for i in 0..dim {
            suffix[i] += coef * (record.states[row + i] - truth[row + i]);
        }
        match spec.mode {
            StepMode::Multiplicative | StepMode::NormalizedMultiplicative => {
                let s = &record.s_hat[t * dim..(t + 1) * dim];
                for i in 0..dim {
                    upstream[i] = suffix[i] * (s[i] * spec.dt);
                }
            }
            _ => upstream.copy_from_slice(&suffix),
        }
        mlp_backward(&upstream, &record.caches[t], module, grads)?;
    }
    Ok(loss)
}
