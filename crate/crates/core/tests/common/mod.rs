#![allow(dead_code)]

use attsolver::data::{generate_dataset, InitSampler, Split, TrajectoryDataset};
use attsolver::nn::{init_module, mlp_backward, mlp_forward, AttentionModule, GradientSet};
use attsolver::solvers::{combine_into, IntegrationScheme, StepMode};
use attsolver::systems::OdeSystem;
use attsolver::training::{loss_from_rows, unroll, TrainConfig, Trainer, UnrollSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Module with a random (nonzero) output layer so every parameter matters.
pub fn perturbed_module(dim: usize, hidden: usize, depth: usize, seed: u64) -> AttentionModule {
    let mut m = init_module(dim, hidden, depth, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    for v in &mut m.weights.last_mut().unwrap().data {
        *v = rng.gen_range(-0.5..0.5);
    }
    for layer in &mut m.activations {
        for act in layer {
            let mut c = act.coeffs();
            for v in c.iter_mut() {
                *v += rng.gen_range(-0.02..0.02);
            }
            act.set_coeffs(&c);
        }
    }
    m
}

/// Fourth-order central differences of `f` with respect to every entry of
/// `params`. The wide step keeps round-off far below the truncation error
/// for gradients many orders smaller than `f` itself.
pub fn fd_gradient(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let h = 1e-4 * p[i].abs().max(1.0);
            let orig = p[i];
            let mut at = |d: f64| {
                p[i] = orig + d;
                let v = f(&p);
                p[i] = orig;
                v
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over matching entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// One random network probe: analytic `d(w . Q)/d(phi)` against central
/// differences. Returns the worst relative error.
pub fn module_probe(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=4);
    let hidden = rng.gen_range(2..=8);
    let depth = rng.gen_range(2..=4);
    let module = perturbed_module(dim, hidden, depth, seed);
    let input: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (_, cache) = mlp_forward(&input, &module).unwrap();
    let mut grads = GradientSet::zeros_like(&module);
    mlp_backward(&w, &cache, &module, &mut grads).unwrap();

    let mut probe = module.clone();
    let numeric = fd_gradient(&module.flat_params(), |p| {
        probe.set_flat_params(p).unwrap();
        let q = probe.forward(&input).unwrap();
        q.iter().zip(&w).map(|(a, b)| a * b).sum()
    });
    max_rel_error(&grads.flatten(), &numeric, 1e-8)
}

/// Tiny harmonic dataset: `d = 2`, `N = 3`.
pub fn tiny_dataset(n_traj: usize, seed: u64) -> TrajectoryDataset {
    let sys = OdeSystem::harmonic(1.3);
    let sampler = InitSampler::for_system(&sys, seed);
    generate_dataset(&sys, &sampler, n_traj, 1e-3, 0.1, 0.3, Split::Train).unwrap().0
}

/// Loss of the truncated (non-teacher-forced) unroll with `Ŝ_t` and the
/// network inputs frozen at the values recorded for `reference`.
pub fn frozen_loss(
    module: &AttentionModule,
    reference: &AttentionModule,
    spec: &UnrollSpec<'_>,
    truth: &[f64],
) -> f64 {
    let record = unroll(reference, spec, truth, &mut rand::rngs::mock::StepRng::new(0, 0)).unwrap();
    let dim = record.dim;
    let mut states = truth[..dim].to_vec();
    let mut next = vec![0.0; dim];
    for t in 0..record.n_steps() {
        let q = module.forward(&record.inputs[t * dim..(t + 1) * dim]).unwrap();
        let u = states[t * dim..(t + 1) * dim].to_vec();
        combine_into(spec.mode, &u, &record.s_hat[t * dim..(t + 1) * dim], spec.dt, Some(&q), &mut next);
        states.extend_from_slice(&next);
    }
    loss_from_rows(&states, truth, dim, spec.loss_scale).unwrap()
}

/// Whole-batch loss gradient on the tiny problem against central
/// differences of the loss itself. With teacher forcing the loss is exact;
/// without it the oracle differentiates the frozen-input surrogate.
pub fn epoch_gradient_error(mode: StepMode, scheme: IntegrationScheme, teacher_forcing: bool, seed: u64) -> f64 {
    let ds = tiny_dataset(3, seed);
    let config = TrainConfig {
        mode,
        teacher_forcing,
        loss_scale: Some(7.0),
        seed,
        architecture: attsolver::training::ArchitectureConfig {
            hidden: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut trainer = Trainer::new(&ds, scheme, config).unwrap();
    let mut module = perturbed_module(2, 4, 2, seed);
    module.options = trainer.module.options;
    trainer.module = module;
    let all: Vec<usize> = (0..ds.len()).collect();
    let analytic = trainer.batch_loss_and_gradient(&ds, &all, 0).unwrap();
    assert_eq!(analytic.used, ds.len());

    let spec = trainer.spec(&ds);
    let reference = trainer.module.clone();
    let mut probe = trainer.module.clone();
    let numeric = fd_gradient(&reference.flat_params(), |p| {
        probe.set_flat_params(p).unwrap();
        let total: f64 = (0..ds.len())
            .map(|i| {
                let truth = ds.trajectory(i);
                if teacher_forcing {
                    let record = unroll(&probe, &spec, truth, &mut rand::rngs::mock::StepRng::new(0, 0)).unwrap();
                    loss_from_rows(&record.states, truth, ds.dim, spec.loss_scale).unwrap()
                } else {
                    frozen_loss(&probe, &reference, &spec, truth)
                }
            })
            .sum();
        total / ds.len() as f64
    });
    max_rel_error(&analytic.gradient.flatten(), &numeric, 1e-8)
}
