use ndarray::{Array3, ArrayView3};

use crate::{Error, Result};

/// Per-channel affine map of stresses (σxx, σyy, σxy) onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    /// Pa
    pub min: [f64; 3],
    /// Pa
    pub max: [f64; 3],
}

impl NormalizationSpec {
    /// Fit on stress tensors laid out `(N, 3, T)`.
    pub fn fit<'a, I>(stresses: I) -> Result<Self>
    where
        I: IntoIterator<Item = ArrayView3<'a, f32>>,
    {
        let mut spec = Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        };
        let mut any = false;
        for s in stresses {
            any = true;
            spec.update(s);
        }
        if !any {
            return Err(Error::config("cannot fit normalization on an empty split"));
        }
        spec.check()?;
        Ok(spec)
    }

    pub(crate) fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub(crate) fn update(&mut self, s: ArrayView3<f32>) {
        for ((_, c, _), &v) in s.indexed_iter() {
            let v = f64::from(v);
            self.min[c] = self.min[c].min(v);
            self.max[c] = self.max[c].max(v);
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        for c in 0..3 {
            if !(self.max[c] > self.min[c]) {
                return Err(Error::config(format!(
                    "degenerate stress channel {c}: min {} max {}",
                    self.min[c], self.max[c]
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, channel: usize, pa: f64) -> f64 {
        2.0 * (pa - self.min[channel]) / (self.max[channel] - self.min[channel]) - 1.0
    }

    pub fn invert(&self, channel: usize, normalized: f64) -> f64 {
        self.min[channel] + 0.5 * (normalized + 1.0) * (self.max[channel] - self.min[channel])
    }

    /// `dPa / dnormalized` for a channel.
    pub fn half_range(&self, channel: usize) -> f64 {
        0.5 * (self.max[channel] - self.min[channel])
    }

    /// Normalize a `(..., 3)` tensor whose last axis is the stress channel.
    pub fn apply_last_axis(&self, pa: &Array3<f64>) -> Array3<f64> {
        let mut out = pa.clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = self.apply(c, *v);
        }
        out
    }

    pub fn invert_last_axis(&self, normalized: &Array3<f64>) -> Array3<f64> {
        let mut out = normalized.clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = self.invert(c, *v);
        }
        out
    }
}
