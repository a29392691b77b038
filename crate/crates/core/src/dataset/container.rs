//! `SPND` little-endian dataset container.
//!
//! ```text
//! magic  b"SPND"
//! u32    version (1)
//! u32    sample count
//! per sample:
//!   u32  geometry_id
//!   u8   boundary case id (1..=5)
//!   u8   load case id (1..=14)
//!   u32  N node count
//!   u32  K triangle count
//!   f64  node coordinates, 2N (x0 y0 x1 y1 ...)
//!   u32  triangle node indices, 3K
//!   u8   constraint flags, N
//!   f32  nodal forces, N × 2 × T (node-major, then channel, then frame)
//!   f32  stress σxx σyy σxy, N × 3 × T
//!   f32  acceleration ax ay, N × 2 × T
//! ```
//! `T` is fixed at 100.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use super::{BcCase, InputMatrix, SampleKey, SampleRecord, STEPS};
use crate::mesh::Mesh;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPND";
pub const VERSION: u32 = 1;

/// A sample as persisted: mesh topology, constraint flags and f32 fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub key: SampleKey,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub bc_flags: Vec<bool>,
    /// `(N, 2, T)` N
    pub forces: Array3<f32>,
    /// `(N, 3, T)` Pa
    pub stress: Array3<f32>,
    /// `(N, 2, T)` m/s²
    pub acceleration: Array3<f32>,
}

impl DatasetSample {
    pub fn from_record(rec: &SampleRecord) -> Self {
        let n = rec.mesh.num_nodes();
        let t = rec.stress.dim().2;
        let input = &rec.input.data;
        Self {
            key: rec.key,
            nodes: rec.mesh.nodes.clone(),
            triangles: rec.mesh.triangles.clone(),
            bc_flags: rec.input.bc_flags(),
            forces: Array3::from_shape_fn((n, 2, t), |(i, c, k)| {
                input[(i, InputMatrix::FX + c, k)] as f32
            }),
            stress: rec.stress.mapv(|v| v as f32),
            acceleration: rec.acceleration.mapv(|v| v as f32),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_frames(&self) -> usize {
        self.stress.dim().2
    }

    /// Mesh without edge labels (labels are not persisted).
    pub fn mesh(&self) -> Mesh {
        Mesh {
            nodes: self.nodes.clone(),
            triangles: self.triangles.clone(),
            edge_labels: vec![Default::default(); self.nodes.len()],
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.bc_flags.len() != n
            || self.forces.dim() != (n, 2, STEPS)
            || self.stress.dim() != (n, 3, STEPS)
            || self.acceleration.dim() != (n, 2, STEPS)
        {
            return Err(Error::shape("sample arrays disagree with node count or T = 100"));
        }
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::format("container", "triangle index out of range"));
        }
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        let n = self.num_nodes();
        w.write_all(&self.key.geometry_id.to_le_bytes())?;
        w.write_all(&[self.key.bc_case.id(), self.key.load_case as u8])?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for p in &self.nodes {
            w.write_all(&p[0].to_le_bytes())?;
            w.write_all(&p[1].to_le_bytes())?;
        }
        for t in &self.triangles {
            for &i in t {
                w.write_all(&(i as u32).to_le_bytes())?;
            }
        }
        let flags: Vec<u8> = self.bc_flags.iter().map(|&b| u8::from(b)).collect();
        w.write_all(&flags)?;
        for arr in [&self.forces, &self.stress, &self.acceleration] {
            // Standard layout is guaranteed by construction; iterate logically anyway.
            let mut buf = Vec::with_capacity(arr.len() * 4);
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let geometry_id = read_u32(r)?;
        let mut ids = [0u8; 2];
        r.read_exact(&mut ids)?;
        let bc_case = BcCase::from_id(ids[0])
            .ok_or_else(|| Error::format("container", format!("bad boundary case id {}", ids[0])))?;
        let n = read_u32(r)? as usize;
        let k = read_u32(r)? as usize;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push([read_f64(r)?, read_f64(r)?]);
        }
        let mut triangles = Vec::with_capacity(k);
        for _ in 0..k {
            triangles.push([read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize]);
        }
        let mut flags = vec![0u8; n];
        r.read_exact(&mut flags)?;
        let mut read_field = |channels: usize| -> Result<Array3<f32>> {
            let mut buf = vec![0u8; n * channels * STEPS * 4];
            r.read_exact(&mut buf)?;
            let vals: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Array3::from_shape_vec((n, channels, STEPS), vals).map_err(|e| Error::shape(e.to_string()))
        };
        let forces = read_field(2)?;
        let stress = read_field(3)?;
        let acceleration = read_field(2)?;
        let sample = Self {
            key: SampleKey {
                geometry_id,
                bc_case,
                load_case: u32::from(ids[1]),
            },
            nodes,
            triangles,
            bc_flags: flags.into_iter().map(|f| f != 0).collect(),
            forces,
            stress,
            acceleration,
        };
        sample.validate()?;
        Ok(sample)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Single-writer appender; the declared sample count is written up front and
/// checked on [`ContainerWriter::finish`].
pub struct ContainerWriter<W: Write> {
    inner: W,
    declared: u32,
    written: u32,
}

impl ContainerWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, count: u32) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), count)
    }
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut inner: W, count: u32) -> Result<Self> {
        inner.write_all(MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&count.to_le_bytes())?;
        Ok(Self {
            inner,
            declared: count,
            written: 0,
        })
    }

    pub fn append(&mut self, sample: &DatasetSample) -> Result<()> {
        if self.written == self.declared {
            return Err(Error::config("container already holds the declared sample count"));
        }
        sample.write_to(&mut self.inner)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.declared {
            return Err(Error::config(format!(
                "declared {} samples but wrote {}",
                self.declared, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_container(path: impl AsRef<Path>, samples: &[DatasetSample]) -> Result<()> {
    let mut w = ContainerWriter::create(path, samples.len() as u32)?;
    for s in samples {
        w.append(s)?;
    }
    w.finish()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u32,
    pub count: u32,
}

fn read_header_from<R: Read>(r: &mut R) -> Result<ContainerHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("container", "bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format("container", format!("unsupported version {version}")));
    }
    Ok(ContainerHeader {
        version,
        count: read_u32(r)?,
    })
}

pub fn read_header(path: impl AsRef<Path>) -> Result<ContainerHeader> {
    read_header_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(ContainerHeader, Vec<DatasetSample>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header_from(&mut r)?;
    let samples = (0..header.count)
        .map(|_| DatasetSample::read_from(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("container", "trailing bytes after last sample"));
    }
    Ok((header, samples))
}
