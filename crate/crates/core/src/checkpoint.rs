//! Flow checkpoints: the full coefficient vector and the step counter in a
//! flat little-endian binary layout.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size       content
//! 0       8          magic bytes "PBENDCKP"
//! 8       1          format version (1)
//! 9       8          step counter (u64)
//! 17      8          vector length n_y (u64)
//! 25      8 * n_y    coefficient vector Y (f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"PBENDCKP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub y: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, step: u64, y: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(25 + 8 * y.len());
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(y.len() as u64).to_le_bytes());
    for v in y {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 25 {
        return Err(Error::Checkpoint("file too short for header".into()));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    if bytes[8] != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {VERSION})",
            bytes[8]
        )));
    }
    let step = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let n = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    if bytes.len() != 25 + 8 * n {
        return Err(Error::Checkpoint(format!(
            "length mismatch: header says {n} values, file holds {} bytes of payload",
            bytes.len() - 25
        )));
    }
    let y = bytes[25..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint { step, y })
}
