use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::probes::{normalized_identity_error, time_rollout};
use super::report::{ExperimentReport, RunRecord, Series};
use crate::data::{generate_dataset, InitSampler, Split, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::nn::InputForm;
use crate::solvers::{IntegrationScheme, StepMode};
use crate::systems::OdeSystem;
use crate::training::{baseline_mse, evaluate_mse, fit, Evaluation, TrainConfig, TrainReport};

/// Sizes and grids for generating the three splits of one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub system: OdeSystem,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub t_end: f64,
    /// Train, validation and test draw from `seed`, `seed + 1`, `seed + 2`.
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            system: OdeSystem::spring_mass(2),
            n_train: 500,
            n_val: 50,
            n_test: 100,
            dt_fine: 1e-3,
            dt_coarse: 0.2,
            t_end: 20.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn split_seed(&self, split: Split) -> u64 {
        self.seed.wrapping_add(match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        })
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn generate_split(&self, split: Split) -> Result<TrajectoryDataset> {
        let sampler = InitSampler::for_system(&self.system, self.split_seed(split));
        let (ds, _) = generate_dataset(
            &self.system,
            &sampler,
            self.split_size(split),
            self.dt_fine,
            self.dt_coarse,
            self.t_end,
            split,
        )?;
        Ok(ds)
    }
}

/// Fixed datasets, solver and base training configuration shared by every
/// arm of an experiment.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: TrajectoryDataset,
    pub val: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub scheme: IntegrationScheme,
    /// Base configuration; each run overrides `seed`.
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Benchmark {
    pub fn generate(spec: &DatasetSpec, scheme: IntegrationScheme, config: TrainConfig, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            train: spec.generate_split(Split::Train)?,
            val: spec.generate_split(Split::Val)?,
            test: spec.generate_split(Split::Test)?,
            scheme,
            config,
            seeds,
        })
    }

    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        self.config.validate()
    }

    fn snapshot(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "system": self.train.system,
            "scheme": self.scheme,
            "dt_coarse": self.train.dt_coarse,
            "dt_fine": self.train.dt_fine,
            "n_steps": self.train.n_steps(),
            "sizes": {"train": self.train.len(), "val": self.val.len(), "test": self.test.len()},
            "config": self.config,
            "seeds": self.seeds,
            "experiment": extra,
        })
    }
}

/// Result of one trained arm on the test split.
#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub report: TrainReport,
    pub test: Evaluation,
    pub seconds: f64,
}

/// Trains on `train` with `config` and scores the best module on the test
/// split.
pub fn train_arm(bench: &Benchmark, train: &TrajectoryDataset, config: &TrainConfig) -> Result<ArmOutcome> {
    let start = Instant::now();
    let report = fit(train, &bench.val, bench.scheme, config)?;
    let test = evaluate_mse(Some(&report.best_module), bench.scheme, config.mode, &bench.test)?;
    Ok(ArmOutcome {
        report,
        test,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn outcome_record(arm: &str, seed: u64, outcome: &ArmOutcome) -> RunRecord {
    let last = outcome.report.epochs.last();
    RunRecord::new(arm, seed)
        .metric("test_mse", outcome.test.mse)
        .metric("explosion_rate", outcome.test.explosion_rate())
        .metric("best_val_loss", outcome.report.best_val_loss)
        .metric("best_epoch", outcome.report.best_epoch as f64)
        .metric("final_train_loss", last.map_or(f64::NAN, |e| e.train_loss))
        .metric("final_mean_attention", last.map_or(f64::NAN, |e| e.mean_attention))
        .timing("train_seconds", outcome.seconds)
}

fn loss_series(arm: &str, seed: u64, report: &TrainReport) -> [Series; 3] {
    let pick = |name: &str, f: fn(&crate::training::EpochRecord) -> f64| Series {
        arm: arm.to_string(),
        seed,
        name: name.to_string(),
        values: report.epochs.iter().map(f).collect(),
    };
    [
        pick("train_loss", |e| e.train_loss),
        pick("val_loss", |e| e.val_loss),
        pick("mean_attention", |e| e.mean_attention),
    ]
}

fn push_baseline(report: &mut ExperimentReport, bench: &Benchmark) -> Result<f64> {
    let base = baseline_mse(bench.scheme, &bench.test)?;
    for &seed in &bench.seeds {
        report.runs.push(
            RunRecord::new("classic", seed)
                .metric("test_mse", base.mse)
                .metric("explosion_rate", base.explosion_rate()),
        );
    }
    Ok(base.mse)
}

/// Nested training subsets for each fraction: each smaller subset must be a
/// prefix of every larger one.
pub fn nested_subsets(train: &TrajectoryDataset, fractions: &[f64], shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    let subsets: Vec<Vec<usize>> = fractions
        .iter()
        .map(|&f| train.reduction_indices(f, shuffle_seed))
        .collect::<Result<_>>()?;
    for a in &subsets {
        for b in &subsets {
            if a.len() <= b.len() && b[..a.len()] != a[..] {
                return Err(Error::Config("data-reduction subsets are not nested".into()));
            }
        }
    }
    Ok(subsets)
}

fn fraction_arm(fraction: f64) -> String {
    format!("fraction={fraction}")
}

/// Trains one module per kept-data fraction and seed.
pub fn data_reduction_sweep(bench: &Benchmark, fractions: &[f64]) -> Result<ExperimentReport> {
    bench.check()?;
    let mut report = ExperimentReport::new(
        "data_reduction",
        bench.snapshot(serde_json::json!({ "fractions": fractions })),
    );
    push_baseline(&mut report, bench)?;
    for &seed in &bench.seeds {
        let subsets = nested_subsets(&bench.train, fractions, seed)?;
        for (&fraction, indices) in fractions.iter().zip(&subsets) {
            let arm = fraction_arm(fraction);
            info!("data reduction: {arm}, seed {seed}, {} trajectories", indices.len());
            let train = bench.train.subset(indices);
            let config = TrainConfig {
                seed,
                ..bench.config.clone()
            };
            let outcome = train_arm(bench, &train, &config)?;
            report
                .runs
                .push(outcome_record(&arm, seed, &outcome).metric("n_train", indices.len() as f64));
            report.series.extend(loss_series(&arm, seed, &outcome.report));
        }
    }
    report.aggregate();
    Ok(report)
}

/// Named architecture/input variant of the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub name: String,
    pub config: TrainConfig,
}

/// The distinct arms of the architecture and input ablation: the default,
/// depths 3 and 4, widths 512 and 2048, the skip connection, and
/// `S * dt` input.
pub fn ablation_arms(base: &TrainConfig) -> Vec<AblationArm> {
    let arm = |name: &str, edit: &dyn Fn(&mut TrainConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        AblationArm {
            name: name.to_string(),
            config,
        }
    };
    vec![
        arm("default", &|_| {}),
        arm("depth=3", &|c| c.architecture.depth = 3),
        arm("depth=4", &|c| c.architecture.depth = 4),
        arm("width=512", &|c| c.architecture.hidden = 512),
        arm("width=2048", &|c| c.architecture.hidden = 2048),
        arm("skip", &|c| c.architecture.skip = true),
        arm("input=slope_times_step", &|c| c.architecture.input_form = InputForm::SlopeTimesStep),
    ]
}

/// Number of rollout steps timed per arm for the relative-speed column.
pub const SPEED_STEPS: usize = 2000;

/// Trains every ablation arm for every seed; reports test MSE and relative
/// inference speed against the default arm.
pub fn ablation_suite(bench: &Benchmark) -> Result<ExperimentReport> {
    ablation_suite_with(bench, &ablation_arms(&bench.config))
}

pub fn ablation_suite_with(bench: &Benchmark, arms: &[AblationArm]) -> Result<ExperimentReport> {
    bench.check()?;
    let names: Vec<&str> = arms.iter().map(|a| a.name.as_str()).collect();
    let mut report = ExperimentReport::new("ablation", bench.snapshot(serde_json::json!({ "arms": names })));
    push_baseline(&mut report, bench)?;
    let u0 = bench.test.initial_state(0).to_vec();
    let mut default_step = None;
    for arm in arms {
        for &seed in &bench.seeds {
            info!("ablation: {}, seed {seed}", arm.name);
            let config = TrainConfig {
                seed,
                ..arm.config.clone()
            };
            let outcome = train_arm(bench, &bench.train, &config)?;
            let per_step = time_rollout(
                Some(&outcome.report.best_module),
                bench.scheme,
                config.mode,
                &bench.test.system,
                bench.test.dt_coarse,
                &u0,
                SPEED_STEPS,
                3,
            )?;
            let reference = *default_step.get_or_insert(per_step);
            report.runs.push(
                outcome_record(&arm.name, seed, &outcome)
                    .metric("params", outcome.report.best_module.param_count() as f64)
                    .timing("seconds_per_step", per_step)
                    .timing("relative_speed", reference / per_step),
            );
        }
    }
    report.notes.push(format!(
        "relative_speed is the default arm's first measured seconds per step divided by the arm's ({SPEED_STEPS}-step rollouts, median of 3)"
    ));
    report.aggregate();
    Ok(report)
}

/// Multiplicative, normalized multiplicative and additive arms with the
/// per-epoch mean of the network output.
pub fn multiplicative_study(bench: &Benchmark) -> Result<ExperimentReport> {
    bench.check()?;
    let modes = [StepMode::Multiplicative, StepMode::NormalizedMultiplicative, StepMode::Additive];
    let mut report = ExperimentReport::new(
        "multiplicative",
        bench.snapshot(serde_json::json!({ "modes": modes })),
    );
    push_baseline(&mut report, bench)?;
    for mode in modes {
        for &seed in &bench.seeds {
            info!("multiplicative study: {mode}, seed {seed}");
            let config = TrainConfig {
                seed,
                mode,
                ..bench.config.clone()
            };
            let outcome = train_arm(bench, &bench.train, &config)?;
            let mut record = outcome_record(mode.name(), seed, &outcome);
            if mode == StepMode::NormalizedMultiplicative {
                let err = normalized_identity_error(
                    &outcome.report.best_module,
                    &bench.test,
                    bench.scheme,
                )?;
                record = record.metric("identity_error", err);
            }
            report.runs.push(record);
            report.series.extend(loss_series(mode.name(), seed, &outcome.report));
        }
    }
    report.aggregate();
    Ok(report)
}

/// Per-step constant noise during training for each mode and kept-data
/// fraction; reports test MSE and the explosion rate of clean test rollouts.
pub fn noise_attack(bench: &Benchmark, sigma: f64, modes: &[StepMode], fractions: &[f64]) -> Result<ExperimentReport> {
    bench.check()?;
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut report = ExperimentReport::new(
        "noise_attack",
        bench.snapshot(serde_json::json!({ "sigma": sigma, "modes": modes, "fractions": fractions })),
    );
    push_baseline(&mut report, bench)?;
    for &mode in modes {
        for &seed in &bench.seeds {
            let subsets = nested_subsets(&bench.train, fractions, seed)?;
            for (&fraction, indices) in fractions.iter().zip(&subsets) {
                let arm = format!("{}@{}", mode.name(), fraction);
                info!("noise attack: {arm}, seed {seed}");
                let config = TrainConfig {
                    seed,
                    mode,
                    noise_sigma: sigma,
                    ..bench.config.clone()
                };
                let outcome = train_arm(bench, &bench.train.subset(indices), &config)?;
                let nonfinite = outcome.test.exploded as f64;
                report.runs.push(
                    outcome_record(&arm, seed, &outcome)
                        .metric("exploded_rollouts", nonfinite)
                        .metric("n_train", indices.len() as f64),
                );
                report.series.extend(loss_series(&arm, seed, &outcome.report));
            }
        }
    }
    report.aggregate();
    Ok(report)
}
