//! Raw little-endian f32 tensor files (`frames.bin`, `audio.bin`).
//!
//! Layout: 4-byte magic `EVT1`, u32 rank, rank x u64 dims, then the
//! row-major f32 payload. All integers little-endian.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"EVT1";

pub fn encode(dims: &[usize], data: &[f32]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(8 + dims.len() * 8 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing magic".into());
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = 8 + rank * 8;
    if bytes.len() < header {
        return Err("truncated header".into());
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * 4 {
        return Err(format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), n * 4));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn write(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(dims, data))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}
