mod common;

use attsolver::data::{generate_dataset, InitSampler, Split};
use attsolver::experiments::{normalized_identity_error, perturbation_probe};
use attsolver::nn::{init_module, init_module_with, ModuleOptions};
use attsolver::solvers::{rollout_from, IntegrationScheme, StepMode};
use attsolver::systems::OdeSystem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `||I + dt A||_2` with `A` read off the right-hand side column by column.
fn svd_growth_bound(system: &OdeSystem, dt: f64) -> f64 {
    let d = system.dim();
    let mut m = DMatrix::<f64>::identity(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let mut col = vec![0.0; d];
        system.rhs_into(&e, &mut col).unwrap();
        for i in 0..d {
            m[(i, j)] += dt * col[i];
        }
    }
    m.singular_values().max()
}

/// `p^T M^-1 p / 2 + q^T K q / 2` for a chain between two walls.
fn chain_energy(masses: &[f64], springs: &[f64], u: &[f64]) -> f64 {
    let n = masses.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = springs[i] + springs[i + 1];
        if i + 1 < n {
            k[(i, i + 1)] = -springs[i + 1];
            k[(i + 1, i)] = -springs[i + 1];
        }
    }
    let q = DVector::from_column_slice(&u[..n]);
    let p = DVector::from_column_slice(&u[n..]);
    let m_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, masses.iter().map(|m| 1.0 / m)));
    0.5 * (p.transpose() * m_inv * &p)[0] + 0.5 * (q.transpose() * k * &q)[0]
}

#[test]
fn euler_growth_factors_respect_operator_norm() {
    for masses in 1..=3 {
        let sys = OdeSystem::spring_mass(masses);
        let sampler = InitSampler::for_system(&sys, 11);
        for dt in [0.01, 0.2, 0.5] {
            let bound = svd_growth_bound(&sys, dt);
            for i in 0..5 {
                let u0 = sampler.sample(i).unwrap();
                let p = perturbation_probe(
                    None,
                    &sys,
                    IntegrationScheme::Euler,
                    StepMode::Classic,
                    dt,
                    u0.as_slice(),
                    1e-6,
                    100,
                )
                .unwrap();
                assert!(p.max_factor() <= bound + 1e-9, "{} > {bound}", p.max_factor());
                assert!(p.max_factor() > 0.0);
            }
        }
    }
}

#[test]
fn zero_init_probe_equals_classic_probe() {
    let sys = OdeSystem::spring_mass(2);
    let module = init_module(4, 16, 2, 0).unwrap();
    let u0 = [0.3, -0.2, 0.1, 0.4];
    let run = |m, mode| perturbation_probe(m, &sys, IntegrationScheme::Rk4, mode, 0.2, &u0, 1e-8, 50).unwrap();
    assert_eq!(run(Some(&module), StepMode::Additive), run(None, StepMode::Classic));
}

#[test]
fn fine_rk4_ground_truth_conserves_energy() {
    let sys = OdeSystem::spring_mass(2);
    let OdeSystem::SpringMass { masses, springs } = &sys else {
        unreachable!()
    };
    let sampler = InitSampler::for_system(&sys, 5);
    let (ds, _) = generate_dataset(&sys, &sampler, 8, 1e-3, 0.2, 20.0, Split::Test).unwrap();
    for i in 0..ds.len() {
        let e0 = chain_energy(masses, springs, ds.row(i, 0));
        for t in 1..=ds.n_steps() {
            let drift = (chain_energy(masses, springs, ds.row(i, t)) - e0).abs() / e0;
            assert!(drift < 1e-6, "trajectory {i} step {t}: drift {drift}");
        }
    }
}

fn scheme() -> impl Strategy<Value = IntegrationScheme> {
    prop::sample::select(IntegrationScheme::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_module_additive_is_bitwise_classic(
        scheme in scheme(),
        hidden in 1usize..12,
        depth in 2usize..5,
        seed in any::<u64>(),
        u0 in prop::collection::vec(-2.0f64..2.0, 4),
        dt in 0.01f64..0.3,
    ) {
        let sys = OdeSystem::spring_mass(2);
        let module = init_module(4, hidden, depth, seed).unwrap();
        let a = rollout_from(&u0, scheme, &sys, dt, 20, StepMode::Additive, Some(&module)).unwrap();
        let b = rollout_from(&u0, scheme, &sys, dt, 20, StepMode::Classic, None).unwrap();
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn all_ones_multiplicative_is_classic(
        scheme in scheme(),
        seed in any::<u64>(),
        u0 in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let sys = OdeSystem::harmonic(1.0);
        let options = ModuleOptions { output_offset: 1.0, ..Default::default() };
        let module = init_module_with(2, 8, 2, seed, options).unwrap();
        let a = rollout_from(&u0, scheme, &sys, 0.1, 20, StepMode::Multiplicative, Some(&module)).unwrap();
        let b = rollout_from(&u0, scheme, &sys, 0.1, 20, StepMode::Classic, None).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            prop_assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn normalized_multiplicative_is_additive_on_scaled_output(
        scheme in scheme(),
        seed in 0u64..1000,
        hidden in 2usize..8,
    ) {
        let ds = common::tiny_dataset(2, seed);
        let module = common::perturbed_module(2, hidden, 2, seed);
        prop_assert!(normalized_identity_error(&module, &ds, scheme).unwrap() < 1e-12);
    }
}
