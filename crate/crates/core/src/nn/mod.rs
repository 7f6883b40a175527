//! Compensation network and its exact reverse-mode gradients.

mod checkpoint;
mod module;
mod rational;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use module::{
    init_module, init_module_with, mlp_backward, mlp_forward, AttentionModule, ForwardCache,
    GradientSet, InputForm, Matrix, ModuleOptions, DEFAULT_DEPTH, DEFAULT_HIDDEN,
};
pub use rational::{
    fit_relu, rational_forward, relu_fit_cached, RationalActivation, RationalEval, ReluFit,
    COEFF_COUNT, RELU_FIT_HALF_WIDTH,
};
