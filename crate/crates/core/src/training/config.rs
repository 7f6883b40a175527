use serde::{Deserialize, Serialize};

use crate::data::NoiseKind;
use crate::error::{Error, Result};
use crate::nn::{InputForm, ModuleOptions, DEFAULT_DEPTH, DEFAULT_HIDDEN};
use crate::solvers::StepMode;

pub const DEFAULT_EPOCHS: usize = 400;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const LOSS_SCALE_MIN: f64 = 1.0;
pub const LOSS_SCALE_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over `epochs`.
    Cosine,
}

/// Shape and switches of the compensation network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub hidden: usize,
    pub depth: usize,
    pub skip: bool,
    pub input_form: InputForm,
    pub per_neuron_activation: bool,
    pub learnable_activation: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            depth: DEFAULT_DEPTH,
            skip: false,
            input_form: InputForm::Slope,
            per_neuron_activation: false,
            learnable_activation: true,
        }
    }
}

impl ArchitectureConfig {
    /// Module options for `mode`. Multiplicative steps start from the
    /// all-ones output.
    pub fn module_options(&self, mode: StepMode) -> ModuleOptions {
        ModuleOptions {
            skip: self.skip,
            input_form: self.input_form,
            output_offset: if mode == StepMode::Multiplicative { 1.0 } else { 0.0 },
            per_neuron_activation: self.per_neuron_activation,
            learnable_activation: self.learnable_activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Trajectories per parameter update.
    pub batch_size: usize,
    /// `c_n`; derived from the training split when absent.
    pub loss_scale: Option<f64>,
    pub teacher_forcing: bool,
    pub noise_sigma: f64,
    pub noise_kind: NoiseKind,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub seed: u64,
    pub mode: StepMode,
    pub architecture: ArchitectureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            loss_scale: None,
            teacher_forcing: true,
            noise_sigma: 0.0,
            noise_kind: NoiseKind::Constant,
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::Constant,
            seed: 0,
            mode: StepMode::Additive,
            architecture: ArchitectureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if let Some(c) = self.loss_scale {
            if !(c > 0.0) || !c.is_finite() {
                return fail(format!("loss_scale must be > 0, got {c}"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return fail(format!("bad Adam hyperparameters ({beta1}, {beta2}, {eps})"));
            }
        }
        if !self.mode.needs_module() {
            return fail(format!("step mode {} has nothing to train", self.mode));
        }
        let arch = &self.architecture;
        if arch.hidden == 0 || arch.depth == 0 {
            return fail("architecture needs hidden >= 1 and depth >= 1".into());
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (zero-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let x = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

/// `1 / mean(u^2)` clamped to `[1, 1e6]`; 1 when the mean is zero.
pub fn default_loss_scale(mean_square: f64) -> f64 {
    if mean_square > 0.0 && mean_square.is_finite() {
        (1.0 / mean_square).clamp(LOSS_SCALE_MIN, LOSS_SCALE_MAX)
    } else {
        LOSS_SCALE_MIN
    }
}
