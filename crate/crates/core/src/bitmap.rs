//! Uncompressed 24-bit BMP output for grid fields.
//!
//! Colour map: values are scaled linearly over the unmasked min/max of the
//! frame to `t ∈ [0, 1]` and painted `(R, G, B) = (255·t, 0, 255·(1 − t))`,
//! so the minimum is pure blue and the maximum pure red. A constant field
//! takes `t = 0.5`. Masked cells are light grey.

use std::io::Write;

use crate::{Error, Result};

pub const MASKED_RGB: [u8; 3] = [220, 220, 220];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// Map a G×G row-major field (row index along y) to RGB pixels with the top
/// image row holding the largest y.
pub fn field_to_rgb(values: &[f64], mask: &[bool], size: usize) -> Result<Vec<[u8; 3]>> {
    if values.len() != size * size || mask.len() != values.len() {
        return Err(Error::shape("field and mask must both have G² entries"));
    }
    let (lo, hi) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = Vec::with_capacity(values.len());
    for row in (0..size).rev() {
        for col in 0..size {
            let k = row * size + col;
            out.push(if !mask[k] {
                MASKED_RGB
            } else if span > 0.0 {
                colormap((values[k] - lo) / span)
            } else {
                colormap(0.5)
            });
        }
    }
    Ok(out)
}

/// Write `pixels` (top row first, `width × height`) as a bottom-up BMP.
pub fn write_bmp<W: Write>(mut w: W, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    if pixels.len() != width * height || width == 0 || height == 0 {
        return Err(Error::shape("pixel count does not match image size"));
    }
    let stride = (3 * width).div_ceil(4) * 4;
    let image_size = stride * height;
    let file_size = 54 + image_size;
    let mut buf = Vec::with_capacity(file_size);
    buf.extend_from_slice(b"BM");
    buf.extend_from_slice(&(file_size as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&54u32.to_le_bytes());
    buf.extend_from_slice(&40u32.to_le_bytes());
    buf.extend_from_slice(&(width as i32).to_le_bytes());
    buf.extend_from_slice(&(height as i32).to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&24u16.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes()); // BI_RGB
    buf.extend_from_slice(&(image_size as u32).to_le_bytes());
    buf.extend_from_slice(&2835i32.to_le_bytes()); // 72 dpi
    buf.extend_from_slice(&2835i32.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for row in pixels.chunks_exact(width).rev() {
        let start = buf.len();
        for &[r, g, b] in row {
            buf.extend_from_slice(&[b, g, r]);
        }
        buf.resize(start + stride, 0);
    }
    w.write_all(&buf)?;
    Ok(())
}
