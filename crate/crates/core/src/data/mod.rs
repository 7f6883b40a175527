//! Ground-truth trajectory datasets: sampling, generation, noise and storage.

mod dataset;
mod generate;
mod io;
mod noise;
mod sampler;

pub use dataset::{Split, TrajectoryDataset};
pub use generate::{generate_dataset, integral_ratio, GenerationReport, MAX_ATTEMPTS};
pub use io::{
    decode_dataset, encode_dataset, metadata_path, read_dataset, write_dataset, write_metadata,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use noise::{inject_noise, NoiseKind};
pub(crate) use noise::add_noise;
pub use sampler::{sample_initial_conditions, InitSampler, VarSpec};
