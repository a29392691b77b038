//! Synthetic dynamic-stress samples: load histories, input matrices, FEM runs,
//! normalization, split presets and on-disk persistence.

mod container;
mod manifest;
mod normalize;
mod split;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::Exec;
use crate::fem::{self, Material};
use crate::geometry::{sample_polygon, PerturbationConfig, FULL_GEOMETRY_COUNT};
use crate::mesh::{triangulate, EdgeLabel, EdgeSet, Mesh, DEFAULT_EDGE_LENGTH};
use crate::{Error, Result};

pub use container::{read_container, read_header, write_container, ContainerHeader, ContainerWriter, DatasetSample};
pub use manifest::{Manifest, FORCE_SCALE, G_CHAR};
pub use normalize::NormalizationSpec;
pub use split::{make_split, Part, SplitPreset, SplitSpec};

/// Frames per load history.
pub const STEPS: usize = 100;
/// Seconds between frames.
pub const DT: f64 = 0.01;
/// Number of distinct load cases in the full family.
pub const LOAD_CASES: u32 = 14;
/// Input channels: x, y, constraint flag, force x, force y.
pub const INPUT_CHANNELS: usize = 5;
/// Peak amplitudes available to load histories, N.
pub const AMPLITUDES: [f64; 5] = [2e3, 4e3, 6e3, 8e3, 10e3];
pub const FREQUENCY_RANGE: (f64, f64) = (1.0, 3.0);

const LOAD_STREAM_SALT: u64 = 0x4c4f_4144_0000_0000;

/// Constrained-edge case with its paired load position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BcCase {
    E2,
    E2E3,
    E1E2,
    E3,
    E1E5,
}

impl BcCase {
    pub const ALL: [BcCase; 5] = [Self::E2, Self::E2E3, Self::E1E2, Self::E3, Self::E1E5];

    /// 1-based identifier stored in the container.
    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    /// Fully fixed edges.
    pub fn fixed_edges(self) -> EdgeSet {
        use EdgeLabel::*;
        match self {
            Self::E2 => EdgeSet::of(&[E2]),
            Self::E2E3 => EdgeSet::of(&[E2, E3]),
            Self::E1E2 => EdgeSet::of(&[E1, E2]),
            Self::E3 => EdgeSet::of(&[E3]),
            Self::E1E5 => EdgeSet::of(&[E1, E5]),
        }
    }

    /// Edges that receive the load histories.
    pub fn load_position(self) -> EdgeSet {
        use EdgeLabel::*;
        match self {
            Self::E2 => EdgeSet::of(&[E4, E5]),
            Self::E2E3 => EdgeSet::of(&[E5]),
            Self::E1E2 => EdgeSet::of(&[E4]),
            Self::E3 => EdgeSet::of(&[E2, E4]),
            Self::E1E5 => EdgeSet::of(&[E2]),
        }
    }
}

impl fmt::Display for BcCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.fixed_edges())
    }
}

impl FromStr for BcCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown boundary case `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Sine,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    X,
    Y,
}

/// Total force applied to the loaded edge over time.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadHistory {
    /// N, one value per frame at `t = k · DT`.
    pub values: Vec<f64>,
    pub frequency: f64,
    pub amplitude: f64,
    pub waveform: Waveform,
    pub direction: Direction,
}

impl LoadHistory {
    pub fn new(waveform: Waveform, direction: Direction, frequency: f64, amplitude: f64) -> Self {
        let values = (0..STEPS)
            .map(|k| {
                let phase = 2.0 * std::f64::consts::PI * frequency * k as f64 * DT;
                amplitude
                    * match waveform {
                        Waveform::Sine => phase.sin(),
                        Waveform::Cosine => phase.cos(),
                    }
            })
            .collect();
        Self {
            values,
            frequency,
            amplitude,
            waveform,
            direction,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            amplitude: self.amplitude * factor,
            ..self.clone()
        }
    }
}

/// Horizontal and vertical histories of load case `case_id` (1..=14).
pub fn gen_load_history(case_id: u32, rng_seed: u64) -> Result<(LoadHistory, LoadHistory)> {
    if !(1..=LOAD_CASES).contains(&case_id) {
        return Err(Error::config(format!("load case {case_id} outside 1..={LOAD_CASES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ LOAD_STREAM_SALT);
    rng.set_stream(u64::from(case_id));
    let mut draw = |direction| {
        let waveform = if rng.random_bool(0.5) {
            Waveform::Sine
        } else {
            Waveform::Cosine
        };
        let frequency = rng.random_range(FREQUENCY_RANGE.0..=FREQUENCY_RANGE.1);
        let amplitude = AMPLITUDES[rng.random_range(0..AMPLITUDES.len())];
        LoadHistory::new(waveform, direction, frequency, amplitude)
    };
    let x = draw(Direction::X);
    let y = draw(Direction::Y);
    Ok((x, y))
}

/// Per-node model input, `(N, 5, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub data: Array3<f64>,
}

impl InputMatrix {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const BC: usize = 2;
    pub const FX: usize = 3;
    pub const FY: usize = 4;

    pub fn num_nodes(&self) -> usize {
        self.data.dim().0
    }

    pub fn bc_flags(&self) -> Vec<bool> {
        (0..self.num_nodes()).map(|n| self.data[(n, Self::BC, 0)] != 0.0).collect()
    }

    /// Interleaved nodal force vectors, `(2N, T)`.
    pub fn force_matrix(&self) -> Array2<f64> {
        let (n, _, t) = self.data.dim();
        Array2::from_shape_fn((2 * n, t), |(d, k)| self.data[(d / 2, Self::FX + d % 2, k)])
    }
}

/// Assemble the input matrix: coordinates, constraint flags on the fixed
/// edges, and the load histories shared equally among free nodes of the
/// loaded edges.
pub fn build_input_matrix(
    mesh: &Mesh,
    bc_case: BcCase,
    load_position: EdgeSet,
    loads: (&LoadHistory, &LoadHistory),
) -> Result<InputMatrix> {
    if bc_case.fixed_edges().intersects(load_position) {
        return Err(Error::config(format!(
            "load position {load_position} overlaps constrained edges of {bc_case}"
        )));
    }
    let steps = loads.0.values.len();
    if loads.1.values.len() != steps {
        return Err(Error::shape("x and y load histories differ in length"));
    }
    let n = mesh.num_nodes();
    let fixed: Vec<bool> = mesh
        .edge_labels
        .iter()
        .map(|l| l.intersects(bc_case.fixed_edges()))
        .collect();
    // A corner shared with a constrained edge carries no load.
    let loaded: Vec<usize> = mesh
        .nodes_on(load_position)
        .into_iter()
        .filter(|&i| !fixed[i])
        .collect();
    if loaded.is_empty() {
        return Err(Error::config(format!("no free nodes on load position {load_position}")));
    }
    let share = 1.0 / loaded.len() as f64;
    let mut data = Array3::zeros((n, INPUT_CHANNELS, steps));
    for i in 0..n {
        for t in 0..steps {
            data[(i, InputMatrix::X, t)] = mesh.nodes[i][0];
            data[(i, InputMatrix::Y, t)] = mesh.nodes[i][1];
            data[(i, InputMatrix::BC, t)] = if fixed[i] { 1.0 } else { 0.0 };
        }
    }
    for &i in &loaded {
        for t in 0..steps {
            data[(i, InputMatrix::FX, t)] = loads.0.values[t] * share;
            data[(i, InputMatrix::FY, t)] = loads.1.values[t] * share;
        }
    }
    Ok(InputMatrix { data })
}

/// Everything that determines a dataset besides the sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub edge_length: f64,
    pub material: Material,
    /// Multiplier on every load history; 1 for real data.
    pub load_scale: f64,
}

impl GenerationConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            perturbation: PerturbationConfig::default(),
            edge_length: DEFAULT_EDGE_LENGTH,
            material: Material::steel(),
            load_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub geometry_id: u32,
    pub bc_case: BcCase,
    pub load_case: u32,
}

/// One simulated sample held in memory.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub key: SampleKey,
    pub mesh: Mesh,
    pub input: InputMatrix,
    /// `(N, 3, T)` Pa: σxx, σyy, σxy.
    pub stress: Array3<f64>,
    /// `(N, 2, T)` m/s².
    pub acceleration: Array3<f64>,
    /// `(N, 2, T)` m; kept for consistency checks, not persisted.
    pub displacement: Array3<f64>,
}

/// Mesh the geometry, apply the boundary case and load case, and run the
/// transient solver.
pub fn simulate_sample(key: SampleKey, config: &GenerationConfig) -> Result<SampleRecord> {
    simulate_inner(key, config).map_err(|source| Error::Sample {
        geometry_id: key.geometry_id,
        bc_case: key.bc_case.to_string(),
        load_case: key.load_case,
        source: Box::new(source),
    })
}

fn simulate_inner(key: SampleKey, config: &GenerationConfig) -> Result<SampleRecord> {
    let polygon = sample_polygon(key.geometry_id, config.seed, &config.perturbation)?;
    let mesh = triangulate(&polygon, config.edge_length)?;
    let (lx, ly) = gen_load_history(key.load_case, config.seed)?;
    let (lx, ly) = (lx.scaled(config.load_scale), ly.scaled(config.load_scale));
    let input = build_input_matrix(&mesh, key.bc_case, key.bc_case.load_position(), (&lx, &ly))?;

    let mut sys = fem::assemble(&mesh, &config.material)?;
    sys.constrain_nodes(&input.bc_flags());
    let response = fem::newmark_solve(&sys, input.force_matrix().view(), DT)?;

    let n = mesh.num_nodes();
    let steps = response.num_frames();
    let mut stress = Array3::zeros((n, 3, steps));
    for t in 0..steps {
        let u = response.displacement.row(t).to_vec();
        let s = fem::recover_stress(&mesh, &config.material, &u)?;
        for (i, v) in s.iter().enumerate() {
            for c in 0..3 {
                stress[(i, c, t)] = v[c];
            }
        }
    }
    let nodal = |m: &Array2<f64>| Array3::from_shape_fn((n, 2, steps), |(i, c, t)| m[(t, 2 * i + c)]);
    let record = SampleRecord {
        key,
        acceleration: nodal(&response.acceleration),
        displacement: nodal(&response.displacement),
        mesh,
        input,
        stress,
    };
    if record.stress.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite stress".into()));
    }
    Ok(record)
}

/// Dataset size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 24 geometries × 3 boundary cases × 4 load cases.
    Desk,
    /// 1024 geometries × 5 boundary cases × 14 load cases.
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(Error::config(format!("unknown scale `{s}` (desk|full)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Full => "full",
        })
    }
}

/// Cartesian product of geometries, boundary cases and load cases.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPlan {
    pub geometry_ids: Vec<u32>,
    pub bc_cases: Vec<BcCase>,
    pub load_cases: Vec<u32>,
}

/// Desk geometries: evenly spread so every geometry split range is populated.
pub const DESK_GEOMETRIES: usize = 24;
pub const DESK_BC_CASES: [BcCase; 3] = [BcCase::E2, BcCase::E3, BcCase::E1E5];
/// Two training, one validation and one test load under the load preset.
pub const DESK_LOAD_CASES: [u32; 4] = [1, 5, 10, 13];
/// Coarser desk meshes; refinement still enforces the node minimum.
pub const DESK_EDGE_LENGTH: f64 = 0.045;

impl DatasetPlan {
    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Full => Self {
                geometry_ids: (1..=FULL_GEOMETRY_COUNT).collect(),
                bc_cases: BcCase::ALL.to_vec(),
                load_cases: (1..=LOAD_CASES).collect(),
            },
            Scale::Desk => Self {
                geometry_ids: (0..DESK_GEOMETRIES as u32)
                    .map(|k| 1 + k * FULL_GEOMETRY_COUNT / DESK_GEOMETRIES as u32)
                    .collect(),
                bc_cases: DESK_BC_CASES.to_vec(),
                load_cases: DESK_LOAD_CASES.to_vec(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.geometry_ids.len() * self.bc_cases.len() * self.load_cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample keys in container order: geometry-major, then boundary case,
    /// then load case.
    pub fn keys(&self) -> Vec<SampleKey> {
        let mut keys = Vec::with_capacity(self.len());
        for &geometry_id in &self.geometry_ids {
            for &bc_case in &self.bc_cases {
                for &load_case in &self.load_cases {
                    keys.push(SampleKey {
                        geometry_id,
                        bc_case,
                        load_case,
                    });
                }
            }
        }
        keys
    }
}

/// Simulate `keys` and convert them to their persisted form.
pub fn generate_samples(keys: &[SampleKey], config: &GenerationConfig, exec: Exec) -> Result<Vec<DatasetSample>> {
    exec.try_map_range(keys.len(), |i| {
        simulate_sample(keys[i], config).map(|r| DatasetSample::from_record(&r))
    })
}

const GENERATION_CHUNK: usize = 32;

/// Generate a full dataset container at `out` plus its manifest at
/// `<out>.manifest`. Samples are simulated in parallel chunks and appended in
/// plan order; normalization is fitted on the preset's training part.
pub fn generate(
    out: &Path,
    scale: Scale,
    seed: u64,
    preset: SplitPreset,
    exec: Exec,
) -> Result<Manifest> {
    let plan = DatasetPlan::for_scale(scale);
    let config = default_generation_config(scale, seed);
    let keys = plan.keys();
    let split = make_split(preset, &keys, seed);
    let mut writer = ContainerWriter::create(out, keys.len() as u32)?;
    let mut norm = NormalizationSpec::empty();
    for (c, chunk) in keys.chunks(GENERATION_CHUNK).enumerate() {
        for (j, sample) in generate_samples(chunk, &config, exec)?.iter().enumerate() {
            if split.is_train(c * GENERATION_CHUNK + j) {
                norm.update(sample.stress.view());
            }
            writer.append(sample)?;
        }
    }
    writer.finish()?;
    norm.check()?;
    let manifest = Manifest::new(&config, scale, keys.len(), norm, split);
    manifest.write(Manifest::path_for(out))?;
    Ok(manifest)
}

/// Read a container and its sidecar manifest.
pub fn load_dataset(path: &Path) -> Result<(Manifest, Vec<DatasetSample>)> {
    let manifest = Manifest::read(Manifest::path_for(path))?;
    let (_, samples) = read_container(path)?;
    if samples.len() != manifest.sample_count {
        return Err(Error::format(
            "manifest",
            format!("sample_count {} but container holds {}", manifest.sample_count, samples.len()),
        ));
    }
    Ok((manifest, samples))
}

pub fn default_generation_config(scale: Scale, seed: u64) -> GenerationConfig {
    let mut cfg = GenerationConfig::new(seed);
    if scale == Scale::Desk {
        cfg.edge_length = DESK_EDGE_LENGTH;
    }
    cfg
}
