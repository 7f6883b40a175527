mod common;

use attsolver::data::{generate_dataset, InitSampler, Split};
use attsolver::solvers::{rollout_from, IntegrationScheme, StepMode};
use attsolver::systems::OdeSystem;
use attsolver::training::{
    baseline_mse, fit, loss_from_rows, ArchitectureConfig, OptimizerConfig, TrainConfig, Trainer,
};
use common::*;

#[test]
fn module_gradients_match_finite_differences() {
    for seed in 0..50 {
        let err = module_probe(seed);
        assert!(err < 1e-5, "probe {seed}: {err}");
    }
}

#[test]
fn teacher_forced_epoch_gradient_matches_finite_differences() {
    for mode in [StepMode::Additive, StepMode::Multiplicative, StepMode::NormalizedMultiplicative, StepMode::NeurVec] {
        for scheme in [IntegrationScheme::Euler, IntegrationScheme::Rk3] {
            let err = epoch_gradient_error(mode, scheme, true, 11);
            assert!(err < 1e-4, "{mode} {scheme}: {err}");
        }
    }
}

#[test]
fn free_running_epoch_gradient_matches_frozen_surrogate() {
    for mode in [StepMode::Additive, StepMode::Multiplicative, StepMode::NeurVec] {
        let err = epoch_gradient_error(mode, IntegrationScheme::Rk4, false, 5);
        assert!(err < 1e-4, "{mode}: {err}");
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        architecture: ArchitectureConfig {
            hidden: 16,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn spring_splits() -> (attsolver::data::TrajectoryDataset, attsolver::data::TrajectoryDataset) {
    let sys = OdeSystem::spring_mass(2);
    let train = generate_dataset(&sys, &InitSampler::for_system(&sys, 1), 10, 1e-2, 0.2, 2.0, Split::Train).unwrap().0;
    let val = generate_dataset(&sys, &InitSampler::for_system(&sys, 2), 4, 1e-2, 0.2, 2.0, Split::Val).unwrap().0;
    (train, val)
}

#[test]
fn zero_learning_rate_keeps_module_and_reports_classic_loss() {
    let (train, val) = spring_splits();
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..small_config()
    };
    let mut trainer = Trainer::new(&train, IntegrationScheme::Euler, config.clone()).unwrap();
    let fresh = trainer.module.clone();
    let record = trainer.train_epoch(&train).unwrap();
    assert_eq!(trainer.module, fresh);

    // Teacher-forced classic increments, built independently.
    let dim = train.dim;
    let mut expected = 0.0;
    for i in 0..train.len() {
        let truth = train.trajectory(i);
        let mut pred = truth[..dim].to_vec();
        for t in 0..train.n_steps() {
            let f = train.system.rhs(&truth[t * dim..(t + 1) * dim].try_into().unwrap()).unwrap();
            let prev = pred[t * dim..].to_vec();
            pred.extend(prev.iter().zip(f.as_slice()).map(|(u, s)| u + s * train.dt_coarse));
        }
        expected += loss_from_rows(&pred, truth, dim, trainer.loss_scale).unwrap();
    }
    expected /= train.len() as f64;
    assert!((record.train_loss - expected).abs() <= 1e-12 * expected, "{} vs {expected}", record.train_loss);

    let report = fit(&train, &val, IntegrationScheme::Euler, &config).unwrap();
    let baseline = baseline_mse(IntegrationScheme::Euler, &val).unwrap();
    assert_eq!(report.epochs[0].val_loss, baseline.mse);
}

#[test]
fn fit_is_deterministic() {
    let (train, val) = spring_splits();
    let strip = |mut r: attsolver::training::TrainReport| {
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    };
    let a = strip(fit(&train, &val, IntegrationScheme::Rk4, &small_config()).unwrap());
    let b = strip(fit(&train, &val, IntegrationScheme::Rk4, &small_config()).unwrap());
    assert_eq!(a, b);
    assert!(a.epochs.iter().all(|e| e.train_loss.is_finite() && e.train_loss >= 0.0));
}

#[test]
fn loss_scale_and_rate_trade_off_exactly_under_sgd() {
    let (train, _) = spring_splits();
    let base = TrainConfig {
        optimizer: OptimizerConfig::Sgd,
        learning_rate: 1e-3,
        loss_scale: Some(1.0),
        ..small_config()
    };
    let scaled = TrainConfig {
        learning_rate: 1e-3 / 4.0,
        loss_scale: Some(4.0),
        ..base.clone()
    };
    let mut a = Trainer::new(&train, IntegrationScheme::Euler, base).unwrap();
    let mut b = Trainer::new(&train, IntegrationScheme::Euler, scaled).unwrap();
    for _ in 0..2 {
        let ra = a.train_epoch(&train).unwrap();
        let rb = b.train_epoch(&train).unwrap();
        assert_eq!(a.module.flat_params(), b.module.flat_params());
        assert_eq!(4.0 * ra.train_loss, rb.train_loss);
    }
}

#[test]
fn empty_training_set_is_a_config_error() {
    let (train, _) = spring_splits();
    let empty = train.subset(&[]);
    assert!(matches!(
        Trainer::new(&empty, IntegrationScheme::Euler, small_config()),
        Err(attsolver::Error::Config(_))
    ));
}

#[test]
fn zero_noise_is_plain_training() {
    let (train, val) = spring_splits();
    let mut noisy = small_config();
    noisy.noise_sigma = 0.0;
    noisy.teacher_forcing = false;
    let mut plain = noisy.clone();
    plain.noise_kind = attsolver::data::NoiseKind::Gaussian;
    let a = fit(&train, &val, IntegrationScheme::Euler, &noisy).unwrap();
    let b = fit(&train, &val, IntegrationScheme::Euler, &plain).unwrap();
    assert_eq!(a.final_module, b.final_module);
}

#[test]
fn resume_continues_the_epoch_counter() {
    let (train, val) = spring_splits();
    let config = TrainConfig {
        epochs: 3,
        ..small_config()
    };
    let mut straight = Trainer::new(&train, IntegrationScheme::Euler, config.clone()).unwrap();
    straight.run(&train, &val, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(&train, IntegrationScheme::Euler, TrainConfig { epochs: 1, ..config.clone() }).unwrap();
    first.run(&train, &val, |_, _| Ok(())).unwrap();
    let mut state = first.state();
    state.config.epochs = 3;
    let json = serde_json::to_string(&state).unwrap();
    let state = serde_json::from_str(&json).unwrap();
    let mut resumed = Trainer::resume(first.module.clone(), first.best_module().cloned(), state).unwrap();
    assert_eq!(resumed.epochs_done, 1);
    resumed.run(&train, &val, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.epochs_done, 3);
    assert_eq!(resumed.module, straight.module);
    assert_eq!(resumed.history.len(), 3);
}

#[test]
fn trained_rollout_beats_coarse_euler_on_a_tiny_problem() {
    let (train, val) = spring_splits();
    let config = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        ..small_config()
    };
    let report = fit(&train, &val, IntegrationScheme::Euler, &config).unwrap();
    let baseline = baseline_mse(IntegrationScheme::Euler, &val).unwrap().mse;
    assert!(report.best_val_loss < 0.5 * baseline, "{} vs {baseline}", report.best_val_loss);
    let u0 = val.initial_state(0);
    let traj = rollout_from(u0, IntegrationScheme::Euler, &val.system, 0.2, 10, StepMode::Additive, Some(&report.best_module)).unwrap();
    assert!(traj.is_finite());
}
