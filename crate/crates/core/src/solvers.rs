//! Explicit fixed-step solvers `u_{n+1} = u_n + S(f, u_n, dt) dt`, optionally
//! corrected by a learned compensation term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{AttentionModule, ForwardCache, InputForm};
use crate::systems::{OdeSystem, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationScheme {
    Euler,
    ImprovedEuler,
    Rk3,
    Rk4,
}

impl IntegrationScheme {
    pub const ALL: [IntegrationScheme; 4] = [
        IntegrationScheme::Euler,
        IntegrationScheme::ImprovedEuler,
        IntegrationScheme::Rk3,
        IntegrationScheme::Rk4,
    ];

    /// Global truncation order.
    pub fn order(self) -> u32 {
        match self {
            IntegrationScheme::Euler => 1,
            IntegrationScheme::ImprovedEuler => 2,
            IntegrationScheme::Rk3 => 3,
            IntegrationScheme::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntegrationScheme::Euler => "euler",
            IntegrationScheme::ImprovedEuler => "improved_euler",
            IntegrationScheme::Rk3 => "rk3",
            IntegrationScheme::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for IntegrationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntegrationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IntegrationScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scheme {s:?} (expected euler, improved_euler, rk3 or rk4)"
                ))
            })
    }
}

/// How the learned term enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `u + S dt`
    Classic,
    /// `u + S dt + Q[S]`
    Additive,
    /// `u + (S dt) * Q[S]`
    Multiplicative,
    /// `u + (S dt) * (1 + Q[S])`
    NormalizedMultiplicative,
    /// `u + S dt + Net(u)`
    NeurVec,
}

impl StepMode {
    pub const ALL: [StepMode; 5] = [
        StepMode::Classic,
        StepMode::Additive,
        StepMode::Multiplicative,
        StepMode::NormalizedMultiplicative,
        StepMode::NeurVec,
    ];

    pub fn needs_module(self) -> bool {
        self != StepMode::Classic
    }

    pub fn name(self) -> &'static str {
        match self {
            StepMode::Classic => "classic",
            StepMode::Additive => "additive",
            StepMode::Multiplicative => "multiplicative",
            StepMode::NormalizedMultiplicative => "normalized_multiplicative",
            StepMode::NeurVec => "neurvec",
        }
    }
}

impl fmt::Display for StepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StepMode::ALL
            .into_iter()
            .find(|mode| mode.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown step mode {s:?}")))
    }
}

/// Stage buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Workspace {
    stages: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            stages: std::array::from_fn(|_| vec![0.0; dim]),
            probe: vec![0.0; dim],
        }
    }
}

fn offset_into(u: &[f64], h: f64, k: &[f64], out: &mut [f64]) {
    for ((o, u), k) in out.iter_mut().zip(u).zip(k) {
        *o = u + h * k;
    }
}

/// Writes the integration term `S(f, u, dt)` (not multiplied by `dt`) into
/// `out`.
pub fn integration_term_into(
    scheme: IntegrationScheme,
    system: &OdeSystem,
    u: &[f64],
    dt: f64,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    let Workspace { stages, probe } = ws;
    let [k1, k2, k3, k4] = stages;
    match scheme {
        IntegrationScheme::Euler => system.rhs_into(u, out)?,
        IntegrationScheme::ImprovedEuler => {
            system.rhs_into(u, k1)?;
            offset_into(u, dt, k1, probe);
            system.rhs_into(probe, k2)?;
            for ((o, a), b) in out.iter_mut().zip(k1.iter()).zip(k2.iter()) {
                *o = 0.5 * (a + b);
            }
        }
        IntegrationScheme::Rk3 => {
            system.rhs_into(u, k1)?;
            offset_into(u, 0.5 * dt, k1, probe);
            system.rhs_into(probe, k2)?;
            for i in 0..u.len() {
                probe[i] = u[i] - dt * k1[i] + 2.0 * dt * k2[i];
            }
            system.rhs_into(probe, k3)?;
            for i in 0..u.len() {
                out[i] = k1[i] / 6.0 + 2.0 * k2[i] / 3.0 + k3[i] / 6.0;
            }
        }
        IntegrationScheme::Rk4 => {
            system.rhs_into(u, k1)?;
            offset_into(u, 0.5 * dt, k1, probe);
            system.rhs_into(probe, k2)?;
            offset_into(u, 0.5 * dt, k2, probe);
            system.rhs_into(probe, k3)?;
            offset_into(u, dt, k3, probe);
            system.rhs_into(probe, k4)?;
            for i in 0..u.len() {
                out[i] = k1[i] / 6.0 + k2[i] / 3.0 + k3[i] / 3.0 + k4[i] / 6.0;
            }
        }
    }
    Ok(())
}

pub fn integration_term(
    scheme: IntegrationScheme,
    system: &OdeSystem,
    u: &StateVector,
    dt: f64,
) -> Result<StateVector> {
    check_step(dt)?;
    check_len("integration term state", system.dim(), u.len())?;
    let mut ws = Workspace::new(u.len());
    let mut out = vec![0.0; u.len()];
    integration_term_into(scheme, system, u.as_slice(), dt, &mut ws, &mut out)?;
    StateVector::new(out)
}

fn check_step(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")))
    }
}

/// Writes the network input for a step: `S` or `S * dt` (attention modes) or
/// the state itself (NeurVec).
pub fn module_input_into(
    mode: StepMode,
    module: &AttentionModule,
    u: &[f64],
    s_hat: &[f64],
    dt: f64,
    out: &mut Vec<f64>,
) {
    out.clear();
    match (mode, module.options.input_form) {
        (StepMode::NeurVec, _) => out.extend_from_slice(u),
        (_, InputForm::Slope) => out.extend_from_slice(s_hat),
        (_, InputForm::SlopeTimesStep) => out.extend(s_hat.iter().map(|s| s * dt)),
    }
}

/// Combines state, integration term and network output into the next state.
#[inline]
pub fn combine_into(mode: StepMode, u: &[f64], s_hat: &[f64], dt: f64, q: Option<&[f64]>, out: &mut [f64]) {
    match (mode, q) {
        (StepMode::Classic, _) | (_, None) => {
            for i in 0..u.len() {
                out[i] = u[i] + s_hat[i] * dt;
            }
        }
        (StepMode::Additive | StepMode::NeurVec, Some(q)) => {
            for i in 0..u.len() {
                out[i] = u[i] + s_hat[i] * dt + q[i];
            }
        }
        (StepMode::Multiplicative, Some(q)) => {
            for i in 0..u.len() {
                out[i] = u[i] + (s_hat[i] * dt) * q[i];
            }
        }
        (StepMode::NormalizedMultiplicative, Some(q)) => {
            for i in 0..u.len() {
                out[i] = u[i] + (s_hat[i] * dt) * (1.0 + q[i]);
            }
        }
    }
}

/// Reusable single-step evaluator for a fixed configuration.
pub struct Stepper<'a> {
    pub scheme: IntegrationScheme,
    pub system: &'a OdeSystem,
    pub dt: f64,
    pub mode: StepMode,
    module: Option<&'a AttentionModule>,
    ws: Workspace,
    s_hat: Vec<f64>,
    net_input: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        scheme: IntegrationScheme,
        system: &'a OdeSystem,
        dt: f64,
        mode: StepMode,
        module: Option<&'a AttentionModule>,
    ) -> Result<Self> {
        check_step(dt)?;
        let dim = system.dim();
        let module = if mode.needs_module() {
            let m = module.ok_or_else(|| {
                Error::Config(format!("step mode {mode} requires a compensation module"))
            })?;
            check_len("module dimension", dim, m.dim)?;
            Some(m)
        } else {
            None
        };
        Ok(Self {
            scheme,
            system,
            dt,
            mode,
            module,
            ws: Workspace::new(dim),
            s_hat: vec![0.0; dim],
            net_input: Vec::with_capacity(dim),
        })
    }

    pub fn step_into(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        integration_term_into(self.scheme, self.system, u, self.dt, &mut self.ws, &mut self.s_hat)?;
        let q = match self.module {
            Some(module) => {
                module_input_into(self.mode, module, u, &self.s_hat, self.dt, &mut self.net_input);
                Some(module.forward(&self.net_input)?)
            }
            None => None,
        };
        combine_into(self.mode, u, &self.s_hat, self.dt, q.as_deref(), out);
        Ok(())
    }

    /// Like [`Self::step_into`] but also returns the network output and keeps
    /// the forward cache (used by probes that inspect the attention value).
    pub fn step_with_cache(
        &mut self,
        u: &[f64],
        cache: &mut ForwardCache,
        out: &mut [f64],
    ) -> Result<Option<Vec<f64>>> {
        integration_term_into(self.scheme, self.system, u, self.dt, &mut self.ws, &mut self.s_hat)?;
        let q = match self.module {
            Some(module) => {
                module_input_into(self.mode, module, u, &self.s_hat, self.dt, &mut self.net_input);
                Some(module.forward_cached(&self.net_input, cache)?)
            }
            None => None,
        };
        combine_into(self.mode, u, &self.s_hat, self.dt, q.as_deref(), out);
        Ok(q)
    }
}

/// One solver step from `u`.
pub fn step(
    u: &StateVector,
    scheme: IntegrationScheme,
    system: &OdeSystem,
    dt: f64,
    mode: StepMode,
    module: Option<&AttentionModule>,
) -> Result<StateVector> {
    check_len("step state", system.dim(), u.len())?;
    let mut stepper = Stepper::new(scheme, system, dt, mode, module)?;
    let mut out = vec![0.0; u.len()];
    stepper.step_into(u.as_slice(), &mut out)?;
    StateVector::new(out)
}

/// States on a uniform time grid, `(N + 1) x d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub dt: f64,
    pub t0: f64,
    pub states: Vec<f64>,
    /// First row whose computation failed or went non-finite; that row and
    /// all later ones hold the last finite state.
    pub exploded_at: Option<usize>,
}

impl Trajectory {
    pub fn rows(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.rows() - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.rows() - 1)
    }

    pub fn is_exploded(&self) -> bool {
        self.exploded_at.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }
}

/// Integrates `n` steps from `u0`.
///
/// Numerical failures (non-finite states, singular right-hand sides or
/// activations) do not abort: the trajectory is frozen at its last finite
/// state and flagged. Configuration errors are returned.
pub fn rollout(
    u0: &StateVector,
    scheme: IntegrationScheme,
    system: &OdeSystem,
    dt: f64,
    n: usize,
    mode: StepMode,
    module: Option<&AttentionModule>,
) -> Result<Trajectory> {
    rollout_from(u0.as_slice(), scheme, system, dt, n, mode, module)
}

pub fn rollout_from(
    u0: &[f64],
    scheme: IntegrationScheme,
    system: &OdeSystem,
    dt: f64,
    n: usize,
    mode: StepMode,
    module: Option<&AttentionModule>,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    let dim = system.dim();
    check_len("rollout initial state", dim, u0.len())?;
    let mut stepper = Stepper::new(scheme, system, dt, mode, module)?;
    let mut states = vec![0.0; (n + 1) * dim];
    states[..dim].copy_from_slice(u0);
    let mut exploded_at = None;
    for t in 0..n {
        let (done, rest) = states.split_at_mut((t + 1) * dim);
        let current = &done[t * dim..];
        let next = &mut rest[..dim];
        let ok = match stepper.step_into(current, next) {
            Ok(()) => next.iter().all(|v| v.is_finite()),
            Err(e) if e.is_numerical() => false,
            Err(e) => return Err(e),
        };
        if !ok {
            exploded_at = Some(t + 1);
            for row in t + 1..=n {
                states.copy_within(t * dim..(t + 1) * dim, row * dim);
            }
            break;
        }
    }
    Ok(Trajectory {
        dim,
        dt,
        t0: 0.0,
        states,
        exploded_at,
    })
}

/// Base step used by [`observed_order`] for each scheme on `T = 1`: small
/// enough to be in the asymptotic regime, large enough that the global error
/// stays well above round-off.
pub fn default_order_step(scheme: IntegrationScheme) -> f64 {
    match scheme {
        IntegrationScheme::Euler | IntegrationScheme::ImprovedEuler => 1e-3,
        IntegrationScheme::Rk3 => 1e-2,
        IntegrationScheme::Rk4 => 2e-2,
    }
}

/// Richardson estimate `log2(err(dt) / err(dt/2))` of the global error at
/// `t_end`, measured against the closed-form solution of `system`.
pub fn observed_order(
    scheme: IntegrationScheme,
    system: &OdeSystem,
    u0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let exact = system.exact_solution(u0, t_end).ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no closed-form solution", system.id()))
    })?;
    let global_error = |h: f64| -> Result<f64> {
        let steps = (t_end / h).round() as usize;
        if ((steps as f64) * h - t_end).abs() > 1e-9 * t_end {
            return Err(Error::InvalidArgument(format!(
                "t_end = {t_end} is not a multiple of dt = {h}"
            )));
        }
        let traj = rollout_from(u0, scheme, system, h, steps, StepMode::Classic, None)?;
        Ok(traj
            .last()
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    };
    Ok((global_error(dt)? / global_error(dt / 2.0)?).log2())
}
