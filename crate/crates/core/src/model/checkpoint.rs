//! `STMC` little-endian checkpoint.
//!
//! ```text
//! magic  b"STMC"
//! u32    version (1)
//! u8     variant (1 spatiotempo-lstm, 2 tempo-lstm, 3 spatio-mlp)
//! u8[3]  reserved (0)
//! u32    d
//! u32    blocks
//! u32    mlp_width
//! u32    mlp_max_nodes
//! u64    initialization seed
//! u64    data seed (master seed of the training dataset, 0 if none)
//! u64    P parameter count
//! f32    parameters, P, in the traversal order of `Model::params`
//! u8     1 if a training-state section follows, else 0
//! training state (optional):
//!   magic b"TRST"
//!   u32   epochs completed
//!   u64   optimizer steps taken
//!   f64   w_data, w_pde, w_bc
//!   f64   best validation loss
//!   u32   epoch of the best validation loss
//!   f32   first moments, P
//!   f32   second moments, P
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, Variant};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"STMC";
const STATE_MAGIC: &[u8; 4] = b"TRST";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: u32,
    pub step: u64,
    pub weights: [f64; 3],
    pub best_val: f64,
    pub best_epoch: u32,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub data_seed: u64,
    pub params: Vec<f32>,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, init_seed: u64, data_seed: u64) -> Self {
        Self {
            config: model.config,
            init_seed,
            data_seed,
            params: model.params.iter().map(|&p| p as f32).collect(),
            train_state: None,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::with_params(self.config, self.params.iter().map(|&p| f64::from(p)).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = self.params.len();
        let mut buf = Vec::with_capacity(64 + 12 * p);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&[self.config.variant.id(), 0, 0, 0]);
        for v in [self.config.d, self.config.blocks, self.config.mlp_width, self.config.mlp_max_nodes] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.init_seed.to_le_bytes());
        buf.extend_from_slice(&self.data_seed.to_le_bytes());
        buf.extend_from_slice(&(p as u64).to_le_bytes());
        put_f32s(&mut buf, &self.params);
        match &self.train_state {
            None => buf.push(0),
            Some(s) => {
                if s.m.len() != p || s.v.len() != p {
                    return Err(Error::shape("optimizer moments do not match the parameter count"));
                }
                buf.push(1);
                buf.extend_from_slice(STATE_MAGIC);
                buf.extend_from_slice(&s.epochs_done.to_le_bytes());
                buf.extend_from_slice(&s.step.to_le_bytes());
                for x in s.weights.iter().chain([&s.best_val]) {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                buf.extend_from_slice(&s.best_epoch.to_le_bytes());
                put_f32s(&mut buf, &s.m);
                put_f32s(&mut buf, &s.v);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = Cursor { bytes: &bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let head = c.take(4)?;
        let variant = Variant::from_id(head[0]).ok_or_else(|| bad(format!("unknown variant id {}", head[0])))?;
        let config = ModelConfig {
            variant,
            d: c.u32()? as usize,
            blocks: c.u32()? as usize,
            mlp_width: c.u32()? as usize,
            mlp_max_nodes: c.u32()? as usize,
        };
        config.validate()?;
        let init_seed = c.u64()?;
        let data_seed = c.u64()?;
        let p = c.u64()? as usize;
        if p != super::param_count(&config) {
            return Err(bad(format!("{p} parameters stored but the configuration needs {}", super::param_count(&config))));
        }
        let params = c.f32s(p)?;
        let train_state = match c.take(1)?[0] {
            0 => None,
            1 => {
                if c.take(4)? != STATE_MAGIC {
                    return Err(bad("bad training-state magic"));
                }
                let epochs_done = c.u32()?;
                let step = c.u64()?;
                let weights = [c.f64()?, c.f64()?, c.f64()?];
                let best_val = c.f64()?;
                let best_epoch = c.u32()?;
                Some(TrainState {
                    epochs_done,
                    step,
                    weights,
                    best_val,
                    best_epoch,
                    m: c.f32s(p)?,
                    v: c.f32s(p)?,
                })
            }
            f => return Err(bad(format!("bad training-state flag {f}"))),
        };
        if c.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { config, init_seed, data_seed, params, train_state })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("checkpoint", reason)
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
