use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Every component shifted by `+sigma`.
    #[default]
    Constant,
    /// Independent `N(0, sigma^2)` per component.
    Gaussian,
}

/// Adds the constant offset `sigma` to every component.
pub fn inject_noise(state: &StateVector, sigma: f64) -> Result<StateVector> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut v = state.as_slice().to_vec();
    add_noise(NoiseKind::Constant, sigma, &mut v, &mut rand::rngs::mock::StepRng::new(0, 0));
    StateVector::new(v)
}

pub(crate) fn add_noise<R: Rng + ?Sized>(kind: NoiseKind, sigma: f64, state: &mut [f64], rng: &mut R) {
    match kind {
        NoiseKind::Constant => state.iter_mut().for_each(|v| *v += sigma),
        NoiseKind::Gaussian => state.iter_mut().for_each(|v| {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }),
    }
}
