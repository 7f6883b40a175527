use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use attsolver::experiments::{DatasetSpec, DEFAULT_EPSILON0};
use attsolver::solvers::{IntegrationScheme, StepMode};
use attsolver::systems::OdeSystem;
use attsolver::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Settings of the experiment drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Kept-data fractions for the sweep and the noise attack.
    pub fractions: Vec<f64>,
    pub attack_fractions: Vec<f64>,
    pub sigma: f64,
    pub attack_modes: Vec<StepMode>,
    pub epsilon0: f64,
    /// Probe length; the test horizon when absent.
    pub probe_steps: Option<usize>,
    pub bench_steps: usize,
    pub bench_repeats: usize,
    /// Checkpoint used by `eval`, `probe` and `bench`; `<out>/best.attw`
    /// when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.5, 0.25, 0.1],
            attack_fractions: vec![0.5, 0.25, 0.1],
            sigma: 1e-5,
            attack_modes: vec![StepMode::Additive, StepMode::NeurVec],
            epsilon0: DEFAULT_EPSILON0,
            probe_steps: None,
            bench_steps: 2000,
            bench_repeats: 5,
            checkpoint: None,
        }
    }
}

/// Everything a command needs, read from one TOML file plus overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shorthand for `data.system`: `spring_mass:<masses>`,
    /// `elastic_pendulum`, `klink:<links>`, `harmonic` or `exponential`.
    pub benchmark: Option<String>,
    pub scheme: IntegrationScheme,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Where datasets are written and read; `<out>/data` when absent.
    pub data_dir: Option<PathBuf>,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: None,
            scheme: IntegrationScheme::Euler,
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
            data_dir: None,
            jobs: 0,
            data: DatasetSpec::default(),
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

pub fn parse_benchmark(id: &str) -> Result<OdeSystem> {
    let (name, size) = match id.split_once(':') {
        Some((n, s)) => (n, Some(s.parse::<usize>().with_context(|| format!("bad size in benchmark {id:?}"))?)),
        None => (id, None),
    };
    Ok(match (name, size) {
        ("spring_mass", s) => OdeSystem::spring_mass(s.unwrap_or(2)),
        ("klink", s) => OdeSystem::klink(s.unwrap_or(2)),
        ("elastic_pendulum", None) => OdeSystem::elastic_pendulum(),
        ("harmonic", None) => OdeSystem::harmonic(1.0),
        ("exponential", None) => OdeSystem::exponential(1.0),
        _ => bail!(
            "unknown benchmark {id:?}; expected spring_mass[:n], klink[:n], elastic_pendulum, harmonic or exponential"
        ),
    })
}

impl RunConfig {
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.experiment.checkpoint.clone().unwrap_or_else(|| self.out.join("best.attw"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        self.data.system.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `root`, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {assignment:?}: {key} is not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads `path` (if any), applies overrides, and resolves shorthands.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| anyhow!("invalid config: {e}"))?;
    if let Some(id) = &config.benchmark {
        config.data.system = parse_benchmark(id)?;
    }
    Ok(config)
}
