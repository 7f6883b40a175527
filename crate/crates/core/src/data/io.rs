//! `ATTS` dataset files.
//!
//! ```text
//! "ATTS"  u32 version  u32 d  u32 N+1  u32 M
//! f64 dt_coarse  f64 dt_fine  u64 seed
//! u32 len, UTF-8 descriptor (JSON: {"id", "split", "system"})
//! M * (N+1) * d  f64, row-major
//! ```
//!
//! Everything is little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Split, TrajectoryDataset};
use super::generate::GenerationReport;
use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::systems::OdeSystem;

pub const DATASET_MAGIC: [u8; 4] = *b"ATTS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    id: String,
    split: Split,
    system: OdeSystem,
}

pub fn encode_dataset(ds: &TrajectoryDataset) -> Result<Vec<u8>> {
    let descriptor = serde_json::to_string(&Descriptor {
        id: ds.system.id().to_string(),
        split: ds.split,
        system: ds.system.clone(),
    })?;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} = {v} exceeds u32")))
    };
    let mut w = ByteWriter::with_capacity(48 + descriptor.len() + ds.data.len() * 8);
    w.bytes(&DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(to_u32(ds.dim, "d")?);
    w.u32(to_u32(ds.rows, "N+1")?);
    w.u32(to_u32(ds.len(), "M")?);
    w.f64(ds.dt_coarse);
    w.f64(ds.dt_fine);
    w.u64(ds.seed);
    w.u32(to_u32(descriptor.len(), "descriptor length")?);
    w.bytes(descriptor.as_bytes());
    w.f64s(&ds.data);
    Ok(w.into_inner())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TrajectoryDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let dim = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let m = r.u32()? as usize;
    let dt_coarse = r.f64()?;
    let dt_fine = r.f64()?;
    let seed = r.u64()?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::Malformed(format!("descriptor is not UTF-8: {e}")))?;
    let descriptor: Descriptor = serde_json::from_str(text)
        .map_err(|e| Error::Malformed(format!("bad descriptor: {e}")))?;
    if descriptor.system.id() != descriptor.id {
        return Err(Error::Malformed(format!(
            "descriptor id {:?} disagrees with system {:?}",
            descriptor.id,
            descriptor.system.id()
        )));
    }
    if descriptor.system.dim() != dim {
        return Err(Error::Malformed(format!(
            "header d = {dim} but {} has dimension {}",
            descriptor.id,
            descriptor.system.dim()
        )));
    }
    let count = m
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Malformed("declared dataset size overflows".into()))?;
    let data = r.f64s(count)?;
    r.finish()?;
    Ok(TrajectoryDataset {
        system: descriptor.system,
        split: descriptor.split,
        dt_coarse,
        dt_fine,
        seed,
        dim,
        rows,
        data,
    })
}

pub fn write_dataset(ds: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    decode_dataset(&fs::read(path)?)
}

/// `<path>.json` next to a dataset file.
pub fn metadata_path(path: impl AsRef<Path>) -> PathBuf {
    let mut p = path.as_ref().as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_metadata(report: &GenerationReport, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(metadata_path(path), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, InitSampler};

    fn sample() -> TrajectoryDataset {
        let sys = OdeSystem::spring_mass(2);
        let sampler = InitSampler::for_system(&sys, 5);
        generate_dataset(&sys, &sampler, 3, 1e-2, 0.2, 1.0, Split::Val).unwrap().0
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_inputs() {
        let bytes = encode_dataset(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic { .. })));

        let mut version = bytes.clone();
        version[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&version), Err(Error::VersionMismatch { found: 7, .. })));

        // Header claims one more trajectory than the payload holds.
        let mut longer = bytes.clone();
        longer[16..20].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_dataset(&longer), Err(Error::Truncated { .. })));

        assert!(matches!(decode_dataset(&bytes[..10]), Err(Error::Truncated { .. })));
    }
}
