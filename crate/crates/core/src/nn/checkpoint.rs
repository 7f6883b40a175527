//! `ATTW` module checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "ATTW"  u32 version  u32 d  u32 d1  u32 h
//! W_1 .. W_h                       f64, row-major, declaration order
//! per hidden layer:  u32 sets  u8 learnable  sets * 7 f64 (a0..a3, b0..b2)
//! f64 output_offset  u8 skip  u8 input_form
//! ```

use std::fs;
use std::path::Path;

use super::module::{layer_shape, AttentionModule, InputForm, Matrix, ModuleOptions};
use super::rational::{RationalActivation, COEFF_COUNT};
use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ATTW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(module: &AttentionModule) -> Vec<u8> {
    let mut w = ByteWriter::with_capacity(20 + module.param_count() * 8 + 32);
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(module.dim as u32);
    w.u32(module.hidden as u32);
    w.u32(module.depth as u32);
    for m in &module.weights {
        w.f64s(&m.data);
    }
    for layer in &module.activations {
        w.u32(layer.len() as u32);
        w.u8(layer.first().map_or(1, |a| a.learnable as u8));
        for act in layer {
            w.f64s(&act.coeffs());
        }
    }
    w.f64(module.options.output_offset);
    w.u8(module.options.skip as u8);
    w.u8(match module.options.input_form {
        InputForm::Slope => 0,
        InputForm::SlopeTimesStep => 1,
    });
    w.into_inner()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AttentionModule> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let depth = r.u32()? as usize;
    if dim == 0 || hidden == 0 || depth == 0 {
        return Err(Error::Malformed(format!(
            "checkpoint sizes must be positive (d={dim}, d1={hidden}, h={depth})"
        )));
    }
    let mut weights = Vec::with_capacity(depth);
    for layer in 0..depth {
        let (rows, cols) = layer_shape(dim, hidden, depth, layer);
        let data = r.f64s(rows.checked_mul(cols).ok_or_else(|| {
            Error::Malformed("layer size overflows".into())
        })?)?;
        weights.push(Matrix { rows, cols, data });
    }
    let mut activations = Vec::with_capacity(depth - 1);
    let mut per_neuron = false;
    let mut learnable_all = true;
    for _ in 0..depth - 1 {
        let sets = r.u32()? as usize;
        if sets != 1 && sets != hidden {
            return Err(Error::Malformed(format!(
                "activation set count {sets} is neither 1 nor d1={hidden}"
            )));
        }
        per_neuron |= sets == hidden && hidden != 1;
        let learnable = r.u8()? != 0;
        learnable_all &= learnable;
        let coeffs = r.f64s(sets * COEFF_COUNT)?;
        let layer = coeffs
            .chunks_exact(COEFF_COUNT)
            .map(|c| {
                let mut act = RationalActivation::identity();
                act.set_coeffs(c);
                act.learnable = learnable;
                act
            })
            .collect();
        activations.push(layer);
    }
    let output_offset = r.f64()?;
    let skip = r.u8()? != 0;
    let input_form = match r.u8()? {
        0 => InputForm::Slope,
        1 => InputForm::SlopeTimesStep,
        other => return Err(Error::Malformed(format!("unknown input form tag {other}"))),
    };
    r.finish()?;
    Ok(AttentionModule {
        dim,
        hidden,
        depth,
        weights,
        activations,
        options: ModuleOptions {
            skip,
            input_form,
            output_offset,
            per_neuron_activation: per_neuron,
            learnable_activation: learnable_all,
        },
    })
}

pub fn write_checkpoint(module: &AttentionModule, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(module))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<AttentionModule> {
    decode_checkpoint(&fs::read(path)?)
}
