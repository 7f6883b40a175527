use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attsolver::data::{generate_dataset, read_dataset, write_dataset, write_metadata, InitSampler, Split, TrajectoryDataset};
use attsolver::experiments::{
    ablation_suite, convergence_probe, data_reduction_sweep, euler_growth_bound, multiplicative_study, noise_attack,
    perturbation_probe, speed_benchmark, Benchmark, ExperimentReport, RunRecord, Series,
};
use attsolver::nn::{init_module_with, read_checkpoint, write_checkpoint, AttentionModule};
use attsolver::solvers::{IntegrationScheme, StepMode};
use attsolver::training::{baseline_mse, curves_csv, evaluate_mse, Trainer, TrainerState};
use log::info;

use crate::config::{load, RunConfig};
use crate::{Command, Common};

pub fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = load(common.config.as_deref(), &common.overrides)?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        cfg.train.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(command: Command, common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match command {
        Command::Generate => generate(&cfg),
        Command::Train { resume } => train(&cfg, resume),
        Command::Eval => eval(&cfg),
        Command::Baseline => baseline(&cfg),
        Command::Sweep => {
            let bench = benchmark(&cfg)?;
            write_report(&cfg, &data_reduction_sweep(&bench, &cfg.experiment.fractions)?)
        }
        Command::Ablate => write_report(&cfg, &ablation_suite(&benchmark(&cfg)?)?),
        Command::Multiplicative => write_report(&cfg, &multiplicative_study(&benchmark(&cfg)?)?),
        Command::Attack => {
            let bench = benchmark(&cfg)?;
            let e = &cfg.experiment;
            write_report(&cfg, &noise_attack(&bench, e.sigma, &e.attack_modes, &e.attack_fractions)?)
        }
        Command::Probe => probe(&cfg),
        Command::Bench => bench(&cfg),
    }
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn split_path(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.data_dir().join(format!("{split}.atts"))
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.data_dir();
    let spec = &cfg.data;
    let mut made = Vec::new();
    for split in Split::ALL {
        let sampler = InitSampler::for_system(&spec.system, spec.split_seed(split));
        let (ds, report) = generate_dataset(
            &spec.system,
            &sampler,
            spec.split_size(split),
            spec.dt_fine,
            spec.dt_coarse,
            spec.t_end,
            split,
        )
        .context("check data.dt_fine, data.dt_coarse and data.t_end")?;
        made.push((split, ds, report));
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (split, ds, report) in made {
        let path = split_path(cfg, split);
        write_dataset(&ds, &path)?;
        write_metadata(&report, &path)?;
        println!(
            "{split}: {} M={} N={} d={} k={} rejected={} -> {}",
            ds.system.id(),
            ds.len(),
            ds.n_steps(),
            ds.dim,
            report.stride,
            report.rejected,
            path.display()
        );
    }
    Ok(())
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<TrajectoryDataset> {
    let path = split_path(cfg, split);
    read_dataset(&path).with_context(|| format!("reading {split} dataset {}", path.display()))
}

fn benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    Ok(Benchmark {
        train: load_split(cfg, Split::Train)?,
        val: load_split(cfg, Split::Val)?,
        test: load_split(cfg, Split::Test)?,
        scheme: cfg.scheme,
        config: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
    })
}

fn write_report(cfg: &RunConfig, report: &ExperimentReport) -> Result<()> {
    let dir = cfg.out.join("reports");
    for path in report.write(&dir)? {
        println!("wrote {}", path.display());
    }
    for a in &report.aggregates {
        if a.metric == "test_mse" {
            println!("{:<28} test_mse median {:e} (min {:e}, max {:e}, n={})", a.arm, a.median, a.min, a.max, a.n);
        }
    }
    Ok(())
}

fn train(cfg: &RunConfig, resume: bool) -> Result<()> {
    let train = load_split(cfg, Split::Train)?;
    let val = load_split(cfg, Split::Val)?;
    let out = &cfg.out;
    let (last_path, best_path, state_path, curves_path) = (
        out.join("last.attw"),
        out.join("best.attw"),
        out.join("state.json"),
        out.join("curves.csv"),
    );
    let mut trainer = if resume {
        let text = fs::read_to_string(&state_path).with_context(|| format!("reading {}", state_path.display()))?;
        let mut state: TrainerState = serde_json::from_str(&text).context("parsing trainer state")?;
        if state.scheme != cfg.scheme {
            bail!("cannot resume: state was trained with {}, config says {}", state.scheme, cfg.scheme);
        }
        state.config.epochs = cfg.train.epochs;
        let module = read_checkpoint(&last_path).with_context(|| format!("reading {}", last_path.display()))?;
        let best = read_checkpoint(&best_path).ok();
        info!("resuming after epoch {}", state.epochs_done);
        Trainer::resume(module, best, state)?
    } else {
        Trainer::new(&train, cfg.scheme, cfg.train.clone())?
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let baseline = baseline_mse(cfg.scheme, &val)?.mse;
    info!("validation baseline ({} classic): {baseline:e}", cfg.scheme);
    trainer.run(&train, &val, |t, record| {
        write_checkpoint(&t.module, &last_path)?;
        if t.state().best_epoch == Some(record.epoch) {
            if let Some(best) = t.best_module() {
                write_checkpoint(best, &best_path)?;
            }
        }
        let state = serde_json::to_string_pretty(&t.state())?;
        write_atomic(&state_path, state.as_bytes()).map_err(|e| attsolver::Error::Config(format!("{e:#}")))?;
        write_atomic(&curves_path, curves_csv(&t.history).as_bytes())
            .map_err(|e| attsolver::Error::Config(format!("{e:#}")))?;
        Ok(())
    })?;
    if !best_path.exists() {
        if let Some(best) = trainer.best_module() {
            write_checkpoint(best, &best_path)?;
        }
    }
    let state = trainer.state();
    println!(
        "trained {} epochs; best epoch {:?} val_mse {:e} (classic baseline {baseline:e}); checkpoint {}",
        state.epochs_done,
        state.best_epoch,
        state.best_val_loss.unwrap_or(f64::NAN),
        best_path.display()
    );
    Ok(())
}

fn load_module(cfg: &RunConfig) -> Result<AttentionModule> {
    let path = cfg.checkpoint();
    read_checkpoint(&path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let test = load_split(cfg, Split::Test)?;
    let module = load_module(cfg)?;
    let result = evaluate_mse(Some(&module), cfg.scheme, cfg.train.mode, &test)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("eval.json");
    fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
    println!("test_mse {}", result.mse);
    println!("exploded {}", result.exploded);
    Ok(())
}

fn baseline(cfg: &RunConfig) -> Result<()> {
    let test = load_split(cfg, Split::Test)?;
    let result = baseline_mse(cfg.scheme, &test)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("baseline.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    println!("test_mse {}", result.mse);
    println!("exploded {}", result.exploded);
    Ok(())
}

/// The checkpoint if one exists, with the configured step mode; otherwise
/// the classic solver.
fn optional_module(cfg: &RunConfig) -> Result<(Option<AttentionModule>, StepMode)> {
    let path = cfg.checkpoint();
    if path.exists() {
        Ok((Some(load_module(cfg)?), cfg.train.mode))
    } else {
        info!("no checkpoint at {}; probing the classic solver", path.display());
        Ok((None, StepMode::Classic))
    }
}

fn probe(cfg: &RunConfig) -> Result<()> {
    let test = load_split(cfg, Split::Test)?;
    let (module, mode) = optional_module(cfg)?;
    let steps = cfg.experiment.probe_steps.unwrap_or(test.n_steps());
    let eps0 = cfg.experiment.epsilon0;
    let p = perturbation_probe(
        module.as_ref(),
        &test.system,
        cfg.scheme,
        mode,
        test.dt_coarse,
        test.initial_state(0),
        eps0,
        steps,
    )?;
    let mut report = ExperimentReport::new(
        "perturbation",
        serde_json::json!({"system": test.system, "scheme": cfg.scheme, "mode": mode, "epsilon0": eps0, "steps": steps}),
    );
    let mut run = RunRecord::new(mode.name(), 0)
        .metric("max_factor", p.max_factor())
        .metric("exploded_at", p.exploded_at.map_or(f64::NAN, |e| e as f64));
    if cfg.scheme == IntegrationScheme::Euler && mode == StepMode::Classic {
        if let Ok(bound) = euler_growth_bound(&test.system, test.dt_coarse) {
            run = run.metric("operator_norm_bound", bound);
        }
    }
    report.runs.push(run);
    for (name, values) in [("epsilon", &p.epsilon), ("factor", &p.factors)] {
        report.series.push(Series {
            arm: mode.name().into(),
            seed: 0,
            name: name.into(),
            values: values.clone(),
        });
    }
    report.aggregate();
    write_report(cfg, &report)?;
    println!("max growth factor {}", p.max_factor());

    if let Some(module) = &module {
        let state_path = cfg.out.join("state.json");
        let delta = fs::read_to_string(&state_path)
            .ok()
            .and_then(|t| serde_json::from_str::<TrainerState>(&t).ok())
            .and_then(|s| s.history.last().map(|r| r.train_loss / s.loss_scale))
            .unwrap_or(f64::NAN);
        let conv = convergence_probe(module, &test, cfg.scheme, mode, delta)?;
        write_report(cfg, &conv)?;
    }
    Ok(())
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let (module, mode) = match optional_module(cfg)? {
        (Some(m), mode) => (m, mode),
        (None, _) => {
            let arch = &cfg.train.architecture;
            let m = init_module_with(
                cfg.data.system.dim(),
                arch.hidden,
                arch.depth,
                cfg.train.seed,
                arch.module_options(cfg.train.mode),
            )?;
            (m, cfg.train.mode)
        }
    };
    let spec = &cfg.data;
    let u0 = match load_split(cfg, Split::Test) {
        Ok(test) if !test.is_empty() => test.initial_state(0).to_vec(),
        _ => InitSampler::for_system(&spec.system, spec.split_seed(Split::Test)).sample(0)?.into_vec(),
    };
    let report = speed_benchmark(
        Some(&module),
        &spec.system,
        cfg.scheme,
        mode,
        spec.dt_coarse,
        spec.dt_fine,
        spec.t_end,
        &u0,
        cfg.experiment.bench_steps,
        cfg.experiment.bench_repeats,
    )?;
    write_report(cfg, &report)?;
    for run in &report.runs {
        println!(
            "{:<28} {:>14.1} steps/s  speedup vs fine {:.2}",
            run.arm,
            run.timing.get("steps_per_second").copied().unwrap_or(f64::NAN),
            run.timing.get("speedup_vs_fine").copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
