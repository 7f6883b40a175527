//! Experiment drivers: test-set evaluation, data-reduction sweeps,
//! architecture ablations, the multiplicative study, noise attacks,
//! perturbation and convergence probes, and speed measurements.

mod drivers;
mod probes;
mod report;

pub use drivers::{
    ablation_arms, ablation_suite, ablation_suite_with, data_reduction_sweep, multiplicative_study,
    nested_subsets, noise_attack, train_arm, AblationArm, ArmOutcome, Benchmark, DatasetSpec, SPEED_STEPS,
};
pub use probes::{
    convergence_probe, euler_growth_bound, normalized_identity_error, perturbation_probe, spectral_norm,
    speed_benchmark, time_rollout, PerturbationProbe, DEFAULT_EPSILON0,
};
pub use report::{median, Aggregate, ExperimentReport, RunRecord, Series};
pub use crate::training::{baseline_mse, evaluate_mse, evaluate_with, Evaluation};
