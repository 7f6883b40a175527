//! Benchmark ODE systems `du/dt = f(u)`.
//!
//! Three benchmarks are provided (spring-mass chain, elastic pendulum,
//! K-link pendulum) plus two systems with closed-form solutions (harmonic
//! oscillator, scalar exponential) used to verify solvers.
//!
//! State layouts:
//! - spring-mass with `n` masses: `[q_1..q_n, p_1..p_n]`
//! - elastic pendulum: `[theta, r, theta_dot, r_dot]`
//! - K-link pendulum: `[theta_1..theta_K, theta_dot_1..theta_dot_K]`
//! - harmonic oscillator: `[q, p]`
//! - exponential: `[u]`

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A finite state of an ODE system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "StateVector",
                index,
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<&[f64]> for StateVector {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }
}

/// An autonomous ODE system together with its physical constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OdeSystem {
    /// Chain of masses joined by springs between two fixed walls.
    /// `springs[i]` joins mass `i-1` and mass `i` (walls at both ends), so
    /// there is one more spring than masses.
    SpringMass { masses: Vec<f64>, springs: Vec<f64> },
    ElasticPendulum { k: f64, m: f64, l0: f64, g: f64 },
    /// `links` unit-length rods carrying unit masses.
    KLink { links: usize, g: f64 },
    /// `q' = p, p' = -omega^2 q`.
    Harmonic { omega: f64 },
    /// `u' = rate * u`.
    Exponential { rate: f64 },
}

pub const GRAVITY: f64 = 9.8;

impl OdeSystem {
    /// Spring-mass chain with `masses` unit masses and unit springs.
    pub fn spring_mass(masses: usize) -> Self {
        OdeSystem::SpringMass {
            masses: vec![1.0; masses],
            springs: vec![1.0; masses + 1],
        }
    }

    pub fn elastic_pendulum() -> Self {
        OdeSystem::ElasticPendulum {
            k: 40.0,
            m: 1.0,
            l0: 10.0,
            g: GRAVITY,
        }
    }

    pub fn klink(links: usize) -> Self {
        OdeSystem::KLink { links, g: GRAVITY }
    }

    pub fn harmonic(omega: f64) -> Self {
        OdeSystem::Harmonic { omega }
    }

    pub fn exponential(rate: f64) -> Self {
        OdeSystem::Exponential { rate }
    }

    pub fn id(&self) -> &'static str {
        match self {
            OdeSystem::SpringMass { .. } => "spring_mass",
            OdeSystem::ElasticPendulum { .. } => "elastic_pendulum",
            OdeSystem::KLink { .. } => "klink",
            OdeSystem::Harmonic { .. } => "harmonic",
            OdeSystem::Exponential { .. } => "exponential",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OdeSystem::SpringMass { masses, .. } => 2 * masses.len(),
            OdeSystem::ElasticPendulum { .. } => 4,
            OdeSystem::KLink { links, .. } => 2 * links,
            OdeSystem::Harmonic { .. } => 2,
            OdeSystem::Exponential { .. } => 1,
        }
    }

    /// Checks the parameter invariants of each system.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            OdeSystem::SpringMass { masses, springs } => {
                if masses.is_empty() {
                    return Err(Error::Config("spring-mass needs at least one mass".into()));
                }
                if springs.len() != masses.len() + 1 {
                    return Err(Error::Config(format!(
                        "spring-mass with {} masses needs {} springs, got {}",
                        masses.len(),
                        masses.len() + 1,
                        springs.len()
                    )));
                }
                masses.iter().try_for_each(|&m| positive("mass", m))?;
                springs.iter().try_for_each(|&k| positive("spring constant", k))
            }
            OdeSystem::ElasticPendulum { k, m, l0, g } => {
                positive("k", *k)?;
                positive("m", *m)?;
                positive("l0", *l0)?;
                positive("g", *g)
            }
            OdeSystem::KLink { links, g } => {
                if *links == 0 {
                    return Err(Error::Config("K-link pendulum needs K >= 1".into()));
                }
                positive("g", *g)
            }
            OdeSystem::Harmonic { omega } => positive("omega", *omega),
            OdeSystem::Exponential { rate } => {
                if rate.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config("exponential rate must be finite".into()))
                }
            }
        }
    }

    /// Evaluates `f(u)` into `out`.
    pub fn rhs_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        check_len("rhs state", dim, u.len())?;
        check_len("rhs output", dim, out.len())?;
        match self {
            OdeSystem::SpringMass { masses, springs } => {
                spring_mass_into(masses, springs, u, out);
                Ok(())
            }
            OdeSystem::ElasticPendulum { k, m, l0, g } => {
                elastic_pendulum_into(*k, *m, *l0, *g, u, out)
            }
            OdeSystem::KLink { links, g } => klink_into(*links, *g, u, out),
            OdeSystem::Harmonic { omega } => {
                out[0] = u[1];
                out[1] = -omega * omega * u[0];
                Ok(())
            }
            OdeSystem::Exponential { rate } => {
                out[0] = rate * u[0];
                Ok(())
            }
        }
    }

    pub fn rhs(&self, u: &StateVector) -> Result<StateVector> {
        let mut out = vec![0.0; self.dim()];
        self.rhs_into(u.as_slice(), &mut out)?;
        Ok(StateVector(out))
    }

    /// Closed-form solution from `u0` at time `t`, for the analytic systems.
    pub fn exact_solution(&self, u0: &[f64], t: f64) -> Option<Vec<f64>> {
        match self {
            OdeSystem::Harmonic { omega } => {
                let (s, c) = (omega * t).sin_cos();
                let (q, p) = (u0[0], u0[1]);
                Some(vec![q * c + p / omega * s, -q * omega * s + p * c])
            }
            OdeSystem::Exponential { rate } => Some(vec![u0[0] * (rate * t).exp()]),
            _ => None,
        }
    }

    /// The matrix `A` (row-major, `d x d`) of linear systems `u' = A u`.
    pub fn linear_matrix(&self) -> Option<Vec<f64>> {
        match self {
            OdeSystem::SpringMass { masses, springs } => {
                let n = masses.len();
                let d = 2 * n;
                let mut a = vec![0.0; d * d];
                for i in 0..n {
                    a[i * d + n + i] = 1.0 / masses[i];
                    let row = (n + i) * d;
                    a[row + i] = -(springs[i] + springs[i + 1]);
                    if i > 0 {
                        a[row + i - 1] = springs[i];
                    }
                    if i + 1 < n {
                        a[row + i + 1] = springs[i + 1];
                    }
                }
                Some(a)
            }
            OdeSystem::Harmonic { omega } => Some(vec![0.0, 1.0, -omega * omega, 0.0]),
            OdeSystem::Exponential { rate } => Some(vec![*rate]),
            _ => None,
        }
    }

    /// Total energy for the conservative linear systems.
    pub fn energy(&self, u: &[f64]) -> Option<f64> {
        match self {
            OdeSystem::SpringMass { masses, springs } => {
                let n = masses.len();
                let (q, p) = u.split_at(n);
                let kinetic: f64 = p.iter().zip(masses).map(|(p, m)| p * p / (2.0 * m)).sum();
                let potential: f64 = springs
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        let right = if i < n { q[i] } else { 0.0 };
                        let left = if i > 0 { q[i - 1] } else { 0.0 };
                        0.5 * k * (right - left).powi(2)
                    })
                    .sum();
                Some(kinetic + potential)
            }
            OdeSystem::Harmonic { omega } => Some(0.5 * u[1] * u[1] + 0.5 * omega * omega * u[0] * u[0]),
            _ => None,
        }
    }
}

fn spring_mass_into(masses: &[f64], springs: &[f64], u: &[f64], out: &mut [f64]) {
    let n = masses.len();
    let (q, p) = u.split_at(n);
    let (dq, dp) = out.split_at_mut(n);
    for i in 0..n {
        let left = if i > 0 { q[i - 1] } else { 0.0 };
        let right = if i + 1 < n { q[i + 1] } else { 0.0 };
        dq[i] = p[i] / masses[i];
        dp[i] = springs[i] * (left - q[i]) + springs[i + 1] * (right - q[i]);
    }
}

fn elastic_pendulum_into(k: f64, m: f64, l0: f64, g: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
    let [theta, r, theta_dot, r_dot] = [u[0], u[1], u[2], u[3]];
    if !(r > 0.0) {
        return Err(Error::SingularState(format!(
            "elastic pendulum length r = {r} must be positive"
        )));
    }
    let (sin, cos) = theta.sin_cos();
    out[0] = theta_dot;
    out[1] = r_dot;
    out[2] = (-g * sin - theta_dot * r_dot) / r;
    out[3] = r * theta_dot * theta_dot - k / m * (r - l0) + g * cos;
    Ok(())
}

fn klink_into(links: usize, g: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
    let system = assemble_klink_raw(links, g, u);
    let accel = solve_linear(&system)?;
    out[..links].copy_from_slice(&u[links..]);
    out[links..].copy_from_slice(&accel);
    Ok(())
}

/// Dense square linear system `A x = b`, `A` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearSystem {
    pub fn new(n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_len("LinearSystem matrix", n * n, a.len())?;
        check_len("LinearSystem rhs", n, b.len())?;
        Ok(Self { n, a, b })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// `max_i |(A x - b)_i|`.
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let row = &self.a[i * self.n..(i + 1) * self.n];
                let ax: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
                (ax - self.b[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Assembles the mass matrix `A` and forcing `b` of the K-link pendulum, with
/// `A_ij = (K - max(i,j) + 1) cos(theta_i - theta_j)` and
/// `b_i = -sum_j c(i,j) theta_dot_j^2 sin(theta_i - theta_j) - (K - i + 1) g sin(theta_i)`
/// where `c(i,j) = K - max(i,j) + 1` (1-based indices).
pub fn assemble_klink(state: &StateVector, system: &OdeSystem) -> Result<LinearSystem> {
    let OdeSystem::KLink { links, g } = system else {
        return Err(Error::InvalidArgument(format!(
            "assemble_klink needs a K-link system, got {}",
            system.id()
        )));
    };
    check_len("K-link state", 2 * links, state.len())?;
    Ok(assemble_klink_raw(*links, *g, state.as_slice()))
}

fn assemble_klink_raw(links: usize, g: f64, u: &[f64]) -> LinearSystem {
    let (theta, theta_dot) = u.split_at(links);
    let k = links as f64;
    let mut a = vec![0.0; links * links];
    let mut b = vec![0.0; links];
    for i in 0..links {
        let mut forcing = 0.0;
        for j in 0..links {
            // 1-based max(i, j) is max(i, j) + 1 here.
            let coupling = k - (i.max(j) + 1) as f64 + 1.0;
            let (sin, cos) = (theta[i] - theta[j]).sin_cos();
            a[i * links + j] = coupling * cos;
            forcing -= coupling * theta_dot[j] * theta_dot[j] * sin;
        }
        b[i] = forcing - (k - i as f64) * g * theta[i].sin();
    }
    LinearSystem { n: links, a, b }
}

/// Solves `A x = b` by LU factorisation with partial pivoting.
///
/// Fails with [`Error::SingularMatrix`] when a pivot falls below
/// `1e-14 * ||A||_inf`.
pub fn solve_linear(system: &LinearSystem) -> Result<Vec<f64>> {
    let n = system.n;
    if let Some(index) = system.a.iter().chain(&system.b).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "LinearSystem",
            index,
        });
    }
    let norm_inf = (0..n)
        .map(|i| system.a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let tolerance = 1e-14 * norm_inf;

    let mut a = system.a.clone();
    let mut x = system.b.clone();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pivot > tolerance) || pivot == 0.0 {
            return Err(Error::SingularMatrix {
                column: col,
                pivot,
                tolerance,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let diag = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for j in col + 1..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let tail: f64 = (col + 1..n).map(|j| a[col * n + j] * x[j]).sum();
        x[col] = (x[col] - tail) / a[col * n + col];
    }
    Ok(x)
}

fn expect_kind(system: &OdeSystem, id: &'static str, state: &StateVector) -> Result<()> {
    if system.id() != id {
        return Err(Error::InvalidArgument(format!(
            "expected a {id} system, got {}",
            system.id()
        )));
    }
    check_len("rhs state", system.dim(), state.len())
}

pub fn rhs_spring_mass(state: &StateVector, system: &OdeSystem) -> Result<StateVector> {
    expect_kind(system, "spring_mass", state)?;
    system.rhs(state)
}

pub fn rhs_elastic_pendulum(state: &StateVector, system: &OdeSystem) -> Result<StateVector> {
    expect_kind(system, "elastic_pendulum", state)?;
    system.rhs(state)
}

pub fn rhs_klink(state: &StateVector, system: &OdeSystem) -> Result<StateVector> {
    expect_kind(system, "klink", state)?;
    system.rhs(state)
}
