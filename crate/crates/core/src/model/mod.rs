//! Stress-sequence networks.
//!
//! Every variant maps a per-sample input `(N, T, 5)` to normalized stresses
//! `(N, T, 3)`; batches add a leading axis. Computation is f64 throughout;
//! checkpoints persist parameters as f32.
//!
//! * [`Variant::SpatiotempoLstm`]: pointwise encoder `5 → 2d → d` with a
//!   leaky rectifier in between, three blocks that each run an LSTM along
//!   time (one sequence per node) and then an LSTM along the node index (one
//!   sequence per frame), and a linear head `d → 3`.
//! * [`Variant::TempoLstm`]: the same pipeline with six time-axis LSTMs.
//! * [`Variant::SpatioMlp`]: per-frame six-layer feedforward network over
//!   the concatenated node inputs, zero-padded to a fixed node capacity.

mod checkpoint;
mod layers;

pub use checkpoint::{Checkpoint, TrainState};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec::Exec;
use crate::{Error, Result};
use layers::{leaky_relu, leaky_relu_backward, Linear, Lstm, LstmTape};

pub const INPUT_CHANNELS: usize = 5;
pub const OUTPUT_CHANNELS: usize = 3;
pub const DEFAULT_WIDTH: usize = 64;
pub const STM_BLOCKS: usize = 3;
/// Hidden width of the feedforward baseline; gives ≈825K parameters.
pub const MLP_WIDTH: usize = 172;
pub const MLP_LAYERS: usize = 6;
/// Node capacity of the feedforward baseline's padded input.
pub const MLP_MAX_NODES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SpatiotempoLstm,
    TempoLstm,
    SpatioMlp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Self::SpatiotempoLstm, Self::TempoLstm, Self::SpatioMlp];

    pub fn id(self) -> u8 {
        match self {
            Self::SpatiotempoLstm => 1,
            Self::TempoLstm => 2,
            Self::SpatioMlp => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == id)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SpatiotempoLstm => "spatiotempo-lstm",
            Self::TempoLstm => "tempo-lstm",
            Self::SpatioMlp => "spatio-mlp",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatiotempo-lstm" | "stm" => Ok(Self::SpatiotempoLstm),
            "tempo-lstm" => Ok(Self::TempoLstm),
            "spatio-mlp" => Ok(Self::SpatioMlp),
            _ => Err(Error::config(format!(
                "unknown variant `{s}` (spatiotempo-lstm|tempo-lstm|spatio-mlp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Feature width of the recurrent variants.
    pub d: usize,
    pub blocks: usize,
    pub mlp_width: usize,
    pub mlp_max_nodes: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, d: usize) -> Self {
        Self {
            variant,
            d,
            blocks: STM_BLOCKS,
            mlp_width: MLP_WIDTH,
            mlp_max_nodes: MLP_MAX_NODES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.blocks == 0 || self.mlp_width == 0 || self.mlp_max_nodes == 0 {
            return Err(Error::config("model widths and block count must be at least 1"));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::SpatiotempoLstm, DEFAULT_WIDTH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SeqAxis {
    Time,
    Nodes,
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Recurrent {
        enc1: Linear,
        enc2: Linear,
        lstms: Vec<(Lstm, SeqAxis)>,
        head: Linear,
    },
    Mlp {
        layers: Vec<Linear>,
        max_nodes: usize,
    },
}

fn build_arch(config: &ModelConfig) -> (Arch, usize) {
    let mut off = 0;
    let mut linear = |inputs, outputs| {
        let l = Linear { inputs, outputs, offset: off };
        off += l.len();
        l
    };
    match config.variant {
        Variant::SpatiotempoLstm | Variant::TempoLstm => {
            let d = config.d;
            let enc1 = linear(INPUT_CHANNELS, 2 * d);
            let enc2 = linear(2 * d, d);
            let mut lstms = Vec::new();
            for k in 0..2 * config.blocks {
                let axis = if config.variant == Variant::SpatiotempoLstm && k % 2 == 1 {
                    SeqAxis::Nodes
                } else {
                    SeqAxis::Time
                };
                let l = Lstm { inputs: d, hidden: d, offset: off };
                off += l.len();
                lstms.push((l, axis));
            }
            let head = Linear { inputs: d, outputs: OUTPUT_CHANNELS, offset: off };
            off += head.len();
            (Arch::Recurrent { enc1, enc2, lstms, head }, off)
        }
        Variant::SpatioMlp => {
            let w = config.mlp_width;
            let m = config.mlp_max_nodes;
            let mut dims = vec![m * INPUT_CHANNELS];
            dims.extend(std::iter::repeat_n(w, MLP_LAYERS - 1));
            dims.push(m * OUTPUT_CHANNELS);
            let layers = dims.windows(2).map(|p| linear(p[0], p[1])).collect();
            (Arch::Mlp { layers, max_nodes: m }, off)
        }
    }
}

/// Exact number of trainable scalars.
pub fn param_count(config: &ModelConfig) -> usize {
    build_arch(config).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    arch: Arch,
    /// Flat parameters in traversal order: layers in forward order; within a
    /// dense layer weight `(out, in)` then bias; within an LSTM `W_ih (4h, in)`,
    /// `W_hh (4h, h)`, `b_ih`, `b_hh` with gates ordered i, f, g, o.
    pub params: Vec<f64>,
}

/// Forward activations of one sample.
pub struct Tape {
    input: Array3<f64>,
    kind: TapeKind,
}

enum TapeKind {
    Recurrent {
        enc_pre: Array2<f64>,
        enc_act: Array2<f64>,
        /// Each LSTM's input in its own `(sequences, length, d)` layout plus its tape.
        stages: Vec<(Array3<f64>, LstmTape)>,
        features: Array2<f64>,
    },
    Mlp {
        /// Inputs to each layer and pre-activations of the hidden layers.
        inputs: Vec<Array2<f64>>,
        pre: Vec<Array2<f64>>,
    },
}

fn swap_01(a: ArrayView3<f64>) -> Array3<f64> {
    a.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (arch, len) = build_arch(&config);
        let mut params = vec![0.0; len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &arch {
            Arch::Recurrent { enc1, enc2, lstms, head } => {
                enc1.init(&mut params, &mut rng, false);
                enc2.init(&mut params, &mut rng, false);
                for (l, _) in lstms {
                    l.init(&mut params, &mut rng);
                }
                head.init(&mut params, &mut rng, true);
            }
            Arch::Mlp { layers, .. } => {
                for l in layers {
                    l.init(&mut params, &mut rng, false);
                }
            }
        }
        Ok(Self { config, arch, params })
    }

    pub fn with_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (arch, len) = build_arch(&config);
        if params.len() != len {
            return Err(Error::shape(format!(
                "{} parameters for a model with {len}",
                params.len()
            )));
        }
        Ok(Self { config, arch, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let (n, t, c) = x.dim();
        if c != INPUT_CHANNELS || n == 0 || t == 0 {
            return Err(Error::shape(format!(
                "input must be (N ≥ 1, T ≥ 1, {INPUT_CHANNELS}), got ({n}, {t}, {c})"
            )));
        }
        if let Arch::Mlp { max_nodes, .. } = self.arch {
            if n > max_nodes {
                return Err(Error::shape(format!("{n} nodes exceed the feedforward capacity {max_nodes}")));
            }
        }
        Ok(())
    }

    /// One sample `(N, T, 5)` → `(N, T, 3)`.
    pub fn forward_sample(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward_tape(x)?.0)
    }

    /// Batch `(B, N, T, 5)` → `(B, N, T, 3)`.
    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array4<f64>> {
        self.forward_with(x, Exec::default())
    }

    pub fn forward_with(&self, x: ArrayView4<f64>, exec: Exec) -> Result<Array4<f64>> {
        let (b, n, t, _) = x.dim();
        let outs = exec.try_map_range(b, |i| self.forward_sample(x.index_axis(Axis(0), i)))?;
        let mut y = Array4::zeros((b, n, t, OUTPUT_CHANNELS));
        for (i, o) in outs.into_iter().enumerate() {
            y.index_axis_mut(Axis(0), i).assign(&o);
        }
        Ok(y)
    }

    pub fn forward_tape(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, Tape)> {
        self.check_input(&x)?;
        let (n, t, _) = x.dim();
        let input = x.as_standard_layout().into_owned();
        match &self.arch {
            Arch::Recurrent { enc1, enc2, lstms, head } => {
                let d = self.config.d;
                let x2 = input.view().into_shape_with_order((n * t, INPUT_CHANNELS)).expect("standard");
                let enc_pre = enc1.forward(&self.params, x2);
                let enc_act = leaky_relu(&enc_pre);
                let mut feats = enc2
                    .forward(&self.params, enc_act.view())
                    .into_shape_with_order((n, t, d))
                    .expect("shape");
                let mut stages = Vec::with_capacity(lstms.len());
                for (lstm, axis) in lstms {
                    let layer_in = match axis {
                        SeqAxis::Time => feats,
                        SeqAxis::Nodes => swap_01(feats.view()),
                    };
                    let tape = lstm.forward(&self.params, layer_in.view());
                    let out = tape.output().view();
                    feats = match axis {
                        SeqAxis::Time => out.to_owned(),
                        SeqAxis::Nodes => swap_01(out),
                    };
                    stages.push((layer_in, tape));
                }
                let features = feats.into_shape_with_order((n * t, d)).expect("shape");
                let y = head
                    .forward(&self.params, features.view())
                    .into_shape_with_order((n, t, OUTPUT_CHANNELS))
                    .expect("shape");
                let kind = TapeKind::Recurrent { enc_pre, enc_act, stages, features };
                Ok((y, Tape { input, kind }))
            }
            Arch::Mlp { layers, max_nodes } => {
                let m = *max_nodes;
                let mut a = Array2::zeros((t, m * INPUT_CHANNELS));
                for ((node, frame, c), &v) in input.indexed_iter() {
                    a[(frame, node * INPUT_CHANNELS + c)] = v;
                }
                let mut inputs = Vec::with_capacity(layers.len());
                let mut pre = Vec::with_capacity(layers.len() - 1);
                for (k, layer) in layers.iter().enumerate() {
                    let z = layer.forward(&self.params, a.view());
                    inputs.push(a);
                    if k + 1 < layers.len() {
                        a = leaky_relu(&z);
                        pre.push(z);
                    } else {
                        a = z;
                    }
                }
                let y = Array3::from_shape_fn((n, t, OUTPUT_CHANNELS), |(node, frame, c)| {
                    a[(frame, node * OUTPUT_CHANNELS + c)]
                });
                Ok((y, Tape { input, kind: TapeKind::Mlp { inputs, pre } }))
            }
        }
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂y` for the taped sample.
    pub fn backward(&self, tape: &Tape, dy: ArrayView3<f64>, grads: &mut [f64]) -> Result<()> {
        let (n, t, _) = tape.input.dim();
        if dy.dim() != (n, t, OUTPUT_CHANNELS) || grads.len() != self.params.len() {
            return Err(Error::shape("output gradient or gradient buffer has the wrong shape"));
        }
        match (&self.arch, &tape.kind) {
            (Arch::Recurrent { enc1, enc2, lstms, head }, TapeKind::Recurrent { enc_pre, enc_act, stages, features }) => {
                let d = self.config.d;
                let dy2 = dy.as_standard_layout();
                let dy2 = dy2.to_shape((n * t, OUTPUT_CHANNELS)).expect("shape");
                let mut df = head
                    .backward(&self.params, grads, features.view(), dy2.view())
                    .into_shape_with_order((n, t, d))
                    .expect("shape");
                for ((lstm, axis), (layer_in, ltape)) in lstms.iter().zip(stages).rev() {
                    df = match axis {
                        SeqAxis::Time => lstm.backward(&self.params, grads, layer_in.view(), ltape, df.view()),
                        SeqAxis::Nodes => {
                            let dl = swap_01(df.view());
                            let dx = lstm.backward(&self.params, grads, layer_in.view(), ltape, dl.view());
                            swap_01(dx.view())
                        }
                    };
                }
                let df2 = df.into_shape_with_order((n * t, d)).expect("shape");
                let mut da = enc2.backward(&self.params, grads, enc_act.view(), df2.view());
                leaky_relu_backward(enc_pre, &mut da);
                let x2 = tape.input.view().into_shape_with_order((n * t, INPUT_CHANNELS)).expect("shape");
                enc1.backward(&self.params, grads, x2, da.view());
            }
            (Arch::Mlp { layers, max_nodes }, TapeKind::Mlp { inputs, pre }) => {
                let mut da = Array2::zeros((t, max_nodes * OUTPUT_CHANNELS));
                for ((node, frame, c), &v) in dy.indexed_iter() {
                    da[(frame, node * OUTPUT_CHANNELS + c)] = v;
                }
                for k in (0..layers.len()).rev() {
                    if k + 1 < layers.len() {
                        leaky_relu_backward(&pre[k], &mut da);
                    }
                    da = layers[k].backward(&self.params, grads, inputs[k].view(), da.view());
                }
            }
            _ => unreachable!("tape built by this model"),
        }
        Ok(())
    }

    fn recurrent(&self) -> Result<(&Linear, &Linear, &[(Lstm, SeqAxis)], &Linear)> {
        match &self.arch {
            Arch::Recurrent { enc1, enc2, lstms, head } => Ok((enc1, enc2, lstms, head)),
            Arch::Mlp { .. } => Err(Error::config("the feedforward variant has no encoder or recurrent stages")),
        }
    }

    fn map_batch(
        &self,
        x: ArrayView4<f64>,
        width: usize,
        f: impl Fn(ArrayView3<f64>) -> Result<Array3<f64>> + Sync,
    ) -> Result<Array4<f64>> {
        let (b, n, t, _) = x.dim();
        let outs = Exec::default().try_map_range(b, |i| f(x.index_axis(Axis(0), i)))?;
        let mut y = Array4::zeros((b, n, t, width));
        for (i, o) in outs.into_iter().enumerate() {
            y.index_axis_mut(Axis(0), i).assign(&o);
        }
        Ok(y)
    }

    fn check_features(&self, x: &ArrayView4<f64>) -> Result<()> {
        if x.dim().3 != self.config.d || x.dim().1 == 0 || x.dim().2 == 0 {
            return Err(Error::shape(format!("features must be (B, N ≥ 1, T ≥ 1, {})", self.config.d)));
        }
        Ok(())
    }

    /// Pointwise encoder: `(B, N, T, 5)` → `(B, N, T, d)`.
    pub fn encode(&self, x: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (enc1, enc2, _, _) = self.recurrent()?;
        if x.dim().3 != INPUT_CHANNELS {
            return Err(Error::shape(format!("encoder input needs {INPUT_CHANNELS} channels")));
        }
        let d = self.config.d;
        self.map_batch(x, d, |s| {
            let (n, t, _) = s.dim();
            let s = s.as_standard_layout();
            let x2 = s.to_shape((n * t, INPUT_CHANNELS)).expect("shape");
            let h = leaky_relu(&enc1.forward(&self.params, x2.view()));
            Ok(enc2.forward(&self.params, h.view()).into_shape_with_order((n, t, d)).expect("shape"))
        })
    }

    fn run_stage(&self, lstm: &Lstm, axis: SeqAxis, feats: ArrayView3<f64>) -> Array3<f64> {
        match axis {
            SeqAxis::Time => lstm.forward(&self.params, feats.as_standard_layout().view()).into_output(),
            SeqAxis::Nodes => swap_01(lstm.forward(&self.params, swap_01(feats).view()).output().view()),
        }
    }

    /// First recurrence of block `k` alone (along time for both LSTM variants).
    pub fn temporal_stage(&self, block: usize, feats: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (_, _, lstms, _) = self.recurrent()?;
        self.check_features(&feats)?;
        let &(lstm, axis) = lstms
            .get(2 * block)
            .ok_or_else(|| Error::config(format!("block {block} out of range")))?;
        self.map_batch(feats, self.config.d, |s| Ok(self.run_stage(&lstm, axis, s)))
    }

    /// Block `k`: its two recurrences in order. `(B, N, T, d)` → same shape.
    pub fn stm_forward(&self, block: usize, feats: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (_, _, lstms, _) = self.recurrent()?;
        self.check_features(&feats)?;
        let pair = lstms
            .get(2 * block..2 * block + 2)
            .ok_or_else(|| Error::config(format!("block {block} out of range")))?;
        self.map_batch(feats, self.config.d, |s| {
            let mid = self.run_stage(&pair[0].0, pair[0].1, s);
            Ok(self.run_stage(&pair[1].0, pair[1].1, mid.view()))
        })
    }

    /// Linear head: `(B, N, T, d)` → `(B, N, T, 3)`.
    pub fn decode(&self, feats: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (_, _, _, head) = self.recurrent()?;
        self.check_features(&feats)?;
        self.map_batch(feats, OUTPUT_CHANNELS, |s| {
            let (n, t, d) = s.dim();
            let s = s.as_standard_layout();
            let f2: ArrayView2<f64> = s.view().into_shape_with_order((n * t, d)).expect("shape");
            Ok(head.forward(&self.params, f2).into_shape_with_order((n, t, OUTPUT_CHANNELS)).expect("shape"))
        })
    }

    /// Index range of the head bias inside [`Model::params`], if the variant has one.
    pub fn head_bias_range(&self) -> Option<std::ops::Range<usize>> {
        match &self.arch {
            Arch::Recurrent { head, .. } => {
                let start = head.offset + head.inputs * head.outputs;
                Some(start..start + head.outputs)
            }
            Arch::Mlp { .. } => None,
        }
    }
}

/// Network input `(N, T, 5)` from positions (m), constraint flags and nodal
/// forces `(N, 2, T)` in newtons; forces are multiplied by `force_scale`.
pub fn input_tensor(nodes: &[[f64; 2]], bc_flags: &[bool], forces: ArrayView3<f32>, force_scale: f64) -> Result<Array3<f64>> {
    let (n, two, t) = forces.dim();
    if n != nodes.len() || n != bc_flags.len() || two != 2 {
        return Err(Error::shape("positions, flags and forces disagree on node count"));
    }
    Ok(Array3::from_shape_fn((n, t, INPUT_CHANNELS), |(i, k, c)| match c {
        0 => nodes[i][0],
        1 => nodes[i][1],
        2 => f64::from(u8::from(bc_flags[i])),
        _ => force_scale * f64::from(forces[(i, c - 3, k)]),
    }))
}

#[cfg(test)]
mod tests;
