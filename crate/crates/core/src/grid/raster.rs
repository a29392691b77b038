//! Debug rasters: `GRID` magic, u32 G, u32 channel id, u32 reserved (0),
//! then G² little-endian f32 values, row-major.

use std::io::{Read, Write};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GRID";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterChannel {
    Sxx = 0,
    Syy = 1,
    Sxy = 2,
    VonMises = 3,
    ResidualX = 4,
    ResidualY = 5,
    /// 1.0 inside the support, 0.0 outside.
    Mask = 6,
}

impl RasterChannel {
    pub fn from_id(id: u32) -> Option<Self> {
        use RasterChannel::*;
        [Sxx, Syy, Sxy, VonMises, ResidualX, ResidualY, Mask]
            .into_iter()
            .find(|c| *c as u32 == id)
    }
}

pub fn write_raster<W: Write>(mut w: W, size: usize, channel: RasterChannel, values: &[f64]) -> Result<()> {
    if values.len() != size * size {
        return Err(Error::shape(format!("raster needs {} values, got {}", size * size, values.len())));
    }
    let mut buf = Vec::with_capacity(16 + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(size as u32).to_le_bytes());
    buf.extend_from_slice(&(channel as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raster<R: Read>(mut r: R) -> Result<(usize, RasterChannel, Vec<f32>)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::format("raster", "bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().unwrap());
    let size = word(4) as usize;
    let channel = RasterChannel::from_id(word(8))
        .ok_or_else(|| Error::format("raster", format!("unknown channel {}", word(8))))?;
    let mut body = vec![0u8; 4 * size * size];
    r.read_exact(&mut body)?;
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((size, channel, values))
}
