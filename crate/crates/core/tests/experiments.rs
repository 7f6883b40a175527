use attsolver::data::{generate_dataset, InitSampler, Split};
use attsolver::experiments::{
    convergence_probe, data_reduction_sweep, multiplicative_study, nested_subsets, noise_attack, speed_benchmark,
    time_rollout, Benchmark, DatasetSpec, ExperimentReport,
};
use attsolver::nn::init_module;
use attsolver::solvers::{IntegrationScheme, StepMode};
use attsolver::systems::OdeSystem;
use attsolver::training::{baseline_mse, fit, ArchitectureConfig, TrainConfig};

fn metric(report: &ExperimentReport, arm: &str, name: &str) -> f64 {
    report
        .runs
        .iter()
        .find(|r| r.arm == arm)
        .and_then(|r| r.metrics.get(name).copied())
        .unwrap_or_else(|| panic!("no {name} for {arm}"))
}

fn tiny_bench(config: TrainConfig, seeds: Vec<u64>) -> Benchmark {
    let spec = DatasetSpec {
        system: OdeSystem::spring_mass(2),
        n_train: 12,
        n_val: 4,
        n_test: 4,
        dt_fine: 1e-2,
        t_end: 2.0,
        ..Default::default()
    };
    Benchmark::generate(&spec, IntegrationScheme::Euler, config, seeds).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        architecture: ArchitectureConfig {
            hidden: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn classic_euler_error_halves_with_the_step() {
    let sys = OdeSystem::harmonic(1.0);
    let (test, _) = generate_dataset(&sys, &InitSampler::for_system(&sys, 3), 4, 1e-4, 1e-2, 1.0, Split::Test).unwrap();
    let module = init_module(2, 8, 2, 0).unwrap();
    let report = convergence_probe(&module, &test, IntegrationScheme::Euler, StepMode::Additive, 0.0).unwrap();
    let ratio = metric(&report, "classic", "error_dt") / metric(&report, "classic", "error_half_dt");
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    for name in ["error_dt", "error_half_dt"] {
        assert_eq!(metric(&report, "additive", name), metric(&report, "classic", name));
    }
}

#[test]
fn trained_module_beats_classic_at_the_coarse_step() {
    let bench = tiny_bench(
        TrainConfig {
            epochs: 30,
            learning_rate: 3e-3,
            architecture: ArchitectureConfig {
                hidden: 16,
                ..Default::default()
            },
            ..tiny_config()
        },
        vec![0],
    );
    let report = fit(&bench.train, &bench.val, bench.scheme, &bench.config).unwrap();
    let delta = report.epochs.last().unwrap().train_loss / report.loss_scale;
    let conv = convergence_probe(&report.best_module, &bench.test, bench.scheme, StepMode::Additive, delta).unwrap();
    assert!(metric(&conv, "additive", "error_dt") < metric(&conv, "classic", "error_dt"));
}

#[test]
fn zero_rate_arms_reproduce_the_classic_baseline() {
    let bench = tiny_bench(
        TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        },
        vec![0, 1],
    );
    let base = baseline_mse(bench.scheme, &bench.test).unwrap().mse;
    let sweep = data_reduction_sweep(&bench, &[0.5, 0.25]).unwrap();
    let attack = noise_attack(&bench, 0.0, &[StepMode::Additive], &[0.5]).unwrap();
    let study = multiplicative_study(&bench).unwrap();
    for report in [&sweep, &attack, &study] {
        for run in &report.runs {
            let mse = run.metrics["test_mse"];
            assert!((mse - base).abs() <= 1e-12 * base, "{} {}: {mse} vs {base}", report.id, run.arm);
        }
    }
    assert_eq!(metric(&study, "multiplicative", "final_mean_attention"), 1.0);
}

#[test]
fn sweep_is_reproducible_and_nested() {
    let bench = tiny_bench(tiny_config(), vec![4]);
    let a = data_reduction_sweep(&bench, &[0.5, 0.25]).unwrap();
    let b = data_reduction_sweep(&bench, &[0.5, 0.25]).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.aggregates_csv(), b.aggregates_csv());
    assert_eq!(metric(&a, "fraction=0.5", "n_train"), 6.0);
    assert_eq!(metric(&a, "fraction=0.25", "n_train"), 3.0);
    let subsets = nested_subsets(&bench.train, &[0.5, 0.25, 0.1], 4).unwrap();
    assert_eq!(subsets[1][..], subsets[0][..subsets[1].len()]);
}

#[test]
fn speed_ordering() {
    let sys = OdeSystem::spring_mass(2);
    let u0 = [0.3, -0.2, 0.1, 0.4];
    let module = init_module(4, 64, 2, 0).unwrap();
    let report = speed_benchmark(Some(&module), &sys, IntegrationScheme::Rk4, StepMode::Additive, 0.2, 1e-3, 20.0, &u0, 20_000, 5).unwrap();
    let timing = |arm: &str| report.runs.iter().find(|r| r.arm == arm).unwrap().timing.clone();
    let ratio = timing("classic_coarse")["speedup_vs_fine"];
    assert!((100.0..=400.0).contains(&ratio), "fine/coarse wall ratio {ratio} for k = 200");
    assert!(timing("additive_coarse")["seconds_per_step"] > timing("classic_coarse")["seconds_per_step"]);

    let per_step = |hidden| {
        let m = init_module(4, hidden, 2, 0).unwrap();
        time_rollout(Some(&m), IntegrationScheme::Euler, StepMode::Additive, &sys, 0.2, &u0, 2000, 5).unwrap()
    };
    assert!(per_step(512) < per_step(2048));
}
