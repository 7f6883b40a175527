//! Rational activation `P(x) / Q(x)` with a cubic numerator and a quadratic
//! denominator.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{solve_linear, LinearSystem};

pub const NUMERATOR_LEN: usize = 4;
pub const DENOMINATOR_LEN: usize = 3;
pub const COEFF_COUNT: usize = NUMERATOR_LEN + DENOMINATOR_LEN;

/// Denominators below this magnitude are treated as poles.
pub const SINGULARITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalActivation {
    /// `a0 + a1 x + a2 x^2 + a3 x^3`
    pub numerator: [f64; NUMERATOR_LEN],
    /// `b0 + b1 x + b2 x^2`
    pub denominator: [f64; DENOMINATOR_LEN],
    pub learnable: bool,
}

/// Value, input derivative and coefficient gradients of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RationalEval {
    pub value: f64,
    pub dx: f64,
    pub dcoeffs: [f64; COEFF_COUNT],
}

impl RationalActivation {
    pub fn identity() -> Self {
        Self {
            numerator: [0.0, 1.0, 0.0, 0.0],
            denominator: [1.0, 0.0, 0.0],
            learnable: true,
        }
    }

    /// The least-squares ReLU approximation on `[-3, 3]`, fitted once per
    /// process.
    pub fn relu_fit() -> Self {
        relu_fit_cached().activation
    }

    pub fn coeffs(&self) -> [f64; COEFF_COUNT] {
        let mut c = [0.0; COEFF_COUNT];
        c[..NUMERATOR_LEN].copy_from_slice(&self.numerator);
        c[NUMERATOR_LEN..].copy_from_slice(&self.denominator);
        c
    }

    pub fn set_coeffs(&mut self, c: &[f64]) {
        self.numerator.copy_from_slice(&c[..NUMERATOR_LEN]);
        self.denominator.copy_from_slice(&c[NUMERATOR_LEN..COEFF_COUNT]);
    }

    #[inline]
    fn parts(&self, x: f64) -> (f64, f64) {
        let [a0, a1, a2, a3] = self.numerator;
        let [b0, b1, b2] = self.denominator;
        (a0 + x * (a1 + x * (a2 + x * a3)), b0 + x * (b1 + x * b2))
    }

    pub fn denominator_at(&self, x: f64) -> f64 {
        self.parts(x).1
    }

    /// `P(x)/Q(x)`, or `None` at a pole.
    #[inline]
    pub fn value(&self, x: f64) -> Option<f64> {
        let (p, q) = self.parts(x);
        (q.abs() >= SINGULARITY_TOLERANCE).then(|| p / q)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> Option<RationalEval> {
        let [_, a1, a2, a3] = self.numerator;
        let [_, b1, b2] = self.denominator;
        let (p, q) = self.parts(x);
        if q.abs() < SINGULARITY_TOLERANCE {
            return None;
        }
        let inv_q = 1.0 / q;
        let value = p * inv_q;
        let dp = a1 + x * (2.0 * a2 + 3.0 * x * a3);
        let dq = b1 + 2.0 * x * b2;
        let dx = (dp - value * dq) * inv_q;
        let x2 = x * x;
        let powers = [1.0, x, x2, x2 * x];
        let mut dcoeffs = [0.0; COEFF_COUNT];
        for k in 0..NUMERATOR_LEN {
            dcoeffs[k] = powers[k] * inv_q;
        }
        for k in 0..DENOMINATOR_LEN {
            dcoeffs[NUMERATOR_LEN + k] = -value * powers[k] * inv_q;
        }
        Some(RationalEval { value, dx, dcoeffs })
    }

    /// True when the denominator has no real root and is positive.
    pub fn denominator_root_free(&self) -> bool {
        let [b0, b1, b2] = self.denominator;
        if b2 == 0.0 {
            return b1 == 0.0 && b0 > 0.0;
        }
        b2 > 0.0 && b1 * b1 - 4.0 * b0 * b2 < 0.0
    }
}

/// Elementwise activation. The error carries the offending coordinate in
/// `unit` (with `layer` 0; callers inside a network re-label it).
pub fn rational_forward(x: &[f64], act: &RationalActivation) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(unit, &xi)| {
            act.value(xi).ok_or_else(|| Error::ActivationSingularity {
                layer: 0,
                unit,
                x: xi,
                denominator: act.parts(xi).1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ReluFit {
    pub activation: RationalActivation,
    /// Max absolute error against ReLU over the fitting grid.
    pub max_error: f64,
}

pub const RELU_FIT_HALF_WIDTH: f64 = 3.0;
const RELU_FIT_POINTS: usize = 601;

pub fn relu_fit_cached() -> &'static ReluFit {
    static FIT: OnceLock<ReluFit> = OnceLock::new();
    FIT.get_or_init(|| fit_relu(RELU_FIT_HALF_WIDTH, RELU_FIT_POINTS))
}

/// Fits a (3, 2) rational function to ReLU on `[-half_width, half_width]`.
///
/// Weighted least squares with Lawson reweighting: each round solves the
/// weighted nonlinear problem by Levenberg-Marquardt (with `b0 = 1` fixed and
/// steps that would give the denominator a real root rejected), then scales
/// every weight by its absolute residual. This drives the weighted
/// least-squares solution towards the minimax fit.
pub fn fit_relu(half_width: f64, points: usize) -> ReluFit {
    let xs: Vec<f64> = (0..points)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.max(0.0)).collect();
    let mut weights = vec![1.0 / points as f64; points];
    // a0..a3, b1, b2 with b0 = 1.
    let mut params = [0.0, 0.5, 0.5, 0.1, 0.0, 0.3];
    let mut best: Option<ReluFit> = None;

    for _round in 0..40 {
        params = levenberg_marquardt(&xs, &ys, &weights, params);
        let act = activation_from(&params);
        let residuals: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (act.value(*x).unwrap_or(f64::INFINITY) - y).abs())
            .collect();
        let max_error = residuals.iter().cloned().fold(0.0, f64::max);
        if best.map_or(true, |b| max_error < b.max_error) {
            best = Some(ReluFit {
                activation: act,
                max_error,
            });
        }
        let total: f64 = weights.iter().zip(&residuals).map(|(w, r)| w * r).sum();
        if !(total > 0.0) {
            break;
        }
        for (w, r) in weights.iter_mut().zip(&residuals) {
            *w *= r / total;
        }
    }
    best.expect("at least one fitting round runs")
}

fn activation_from(p: &[f64; 6]) -> RationalActivation {
    RationalActivation {
        numerator: [p[0], p[1], p[2], p[3]],
        denominator: [1.0, p[4], p[5]],
        learnable: true,
    }
}

fn weighted_cost(xs: &[f64], ys: &[f64], w: &[f64], p: &[f64; 6]) -> f64 {
    let act = activation_from(p);
    xs.iter()
        .zip(ys)
        .zip(w)
        .map(|((x, y), w)| {
            let r = act.value(*x).unwrap_or(f64::INFINITY) - y;
            w * r * r
        })
        .sum()
}

fn levenberg_marquardt(xs: &[f64], ys: &[f64], w: &[f64], start: [f64; 6]) -> [f64; 6] {
    let mut p = start;
    let mut cost = weighted_cost(xs, ys, w, &p);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let act = activation_from(&p);
        let mut jtj = [0.0; 36];
        let mut jtr = [0.0; 6];
        for ((&x, &y), &wi) in xs.iter().zip(ys).zip(w) {
            let e = act.eval(x).expect("iterates keep the denominator root-free");
            let r = e.value - y;
            let grad = [
                e.dcoeffs[0],
                e.dcoeffs[1],
                e.dcoeffs[2],
                e.dcoeffs[3],
                e.dcoeffs[5],
                e.dcoeffs[6],
            ];
            for i in 0..6 {
                jtr[i] += wi * grad[i] * r;
                for j in 0..6 {
                    jtj[i * 6 + j] += wi * grad[i] * grad[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[i * 6 + i] += lambda * jtj[i * 6 + i].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Ok(system) = LinearSystem::new(6, damped.to_vec(), rhs) else {
                break;
            };
            let Ok(delta) = solve_linear(&system) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for i in 0..6 {
                trial[i] += delta[i];
            }
            let trial_cost = if activation_from(&trial).denominator_root_free() {
                weighted_cost(xs, ys, w, &trial)
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    p
}
