//! Losses, metrics, the training loop and evaluation.

mod adamw;
mod loss;
mod metrics;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adamw::AdamW;
pub use loss::{
    loss_bc, loss_data, loss_pde, loss_pde_value, sample_loss, total_loss, LossParts, LossWeights, PdeContext,
};
pub use metrics::{mae, mrpe, EvalReport, CHANNELS};

use crate::dataset::{DatasetSample, Manifest, NormalizationSpec};
use crate::exec::Exec;
use crate::fem::von_mises;
use crate::model::{input_tensor, Checkpoint, Model, TrainState};
use crate::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-2;
pub const FULL_EPOCHS: usize = 300;
pub const DESK_EPOCHS: usize = 60;
/// Hidden width for desk-scale runs, sized so six 60-epoch runs fit a single CPU.
pub const DESK_WIDTH: usize = 4;
/// Grid used for the equilibrium term during training.
pub const TRAIN_PDE_GRID: usize = 24;
/// Share of the initial weighted data loss each calibrated term starts at.
pub const AUTO_WEIGHT_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Floor of the cosine decay; equal to `learning_rate` for a constant rate.
    pub min_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub pde_grid: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            min_learning_rate: DEFAULT_LEARNING_RATE * 1e-2,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
            pde_grid: TRAIN_PDE_GRID,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.min_learning_rate > 0.0 && self.min_learning_rate <= self.learning_rate) {
            return Err(Error::config("minimum learning rate must lie in (0, learning rate]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("optimizer betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if self.pde_grid < 2 {
            return Err(Error::config("equilibrium grid must be at least 2×2"));
        }
        Ok(())
    }

    /// Cosine decay from `learning_rate` to `min_learning_rate` over the run;
    /// `epoch` counts from 1.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let phase = (epoch.saturating_sub(1)) as f64 / (self.epochs - 1) as f64;
        let span = self.learning_rate - self.min_learning_rate;
        self.min_learning_rate + 0.5 * span * (1.0 + (std::f64::consts::PI * phase.min(1.0)).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    Fixed(LossWeights),
    /// `w_data = 1`; the other two are set before the first epoch so each
    /// weighted term equals [`AUTO_WEIGHT_SHARE`] of the data term, then frozen.
    Auto,
}

/// One sample ready for the network: input `(N, T, 5)`, normalized target
/// `(N, T, 3)`, constraint flags and the equilibrium context.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: Array3<f64>,
    pub target: Array3<f64>,
    pub bc_flags: Vec<bool>,
    pub pde: Option<PdeContext>,
}

impl Prepared {
    pub fn new(sample: &DatasetSample, manifest: &Manifest, pde_grid: Option<usize>) -> Result<Self> {
        let norm = &manifest.normalization;
        let (n, _, t) = sample.stress.dim();
        let input = input_tensor(&sample.nodes, &sample.bc_flags, sample.forces.view(), manifest.force_scale)?;
        let target = Array3::from_shape_fn((n, t, 3), |(i, f, c)| norm.apply(c, f64::from(sample.stress[(i, c, f)])));
        let pde = pde_grid
            .map(|g| {
                let m = &manifest.material;
                PdeContext::new(sample, m.density, m.thickness, manifest.g_char, g)
            })
            .transpose()?;
        Ok(Self { input, target, bc_flags: sample.bc_flags.clone(), pde })
    }
}

pub fn prepare_samples(
    samples: &[DatasetSample],
    indices: &[usize],
    manifest: &Manifest,
    pde_grid: Option<usize>,
    exec: Exec,
) -> Result<Vec<Prepared>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::config(format!("sample index {bad} out of range ({} samples)", samples.len())));
    }
    exec.try_map_range(indices.len(), |k| Prepared::new(&samples[indices[k]], manifest, pde_grid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossParts,
    pub train_total: f64,
    pub val: LossParts,
    pub val_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Epochs run by this call; epoch 0 (the initialized model) is included
    /// unless the run was resumed.
    pub history: Vec<EpochRecord>,
    pub weights: LossWeights,
    pub best_epoch: usize,
    pub best_val: f64,
    pub seconds: f64,
}

/// Where a run writes: the best checkpoint at `checkpoint`, the latest with
/// optimizer state at `<checkpoint>.last`, and the log.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
}

impl TrainOutputs {
    pub fn new(checkpoint: impl Into<PathBuf>) -> Self {
        Self { checkpoint: checkpoint.into(), log: None }
    }

    pub fn with_log(mut self, log: impl Into<PathBuf>) -> Self {
        self.log = Some(log.into());
        self
    }

    pub fn last_path(&self) -> PathBuf {
        suffixed(&self.checkpoint, "last")
    }

    pub fn dump_path(&self) -> PathBuf {
        suffixed(&self.checkpoint, "dump")
    }
}

fn suffixed(p: &Path, ext: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub weights: WeightMode,
    pub train: &'a [Prepared],
    pub val: &'a [Prepared],
    pub norm: NormalizationSpec,
    pub init_seed: u64,
    pub data_seed: u64,
    pub exec: Exec,
}

struct Log(Option<File>);

impl Log {
    fn line(&mut self, epoch: usize, split: &str, p: &LossParts, total: f64) -> Result<()> {
        if let Some(f) = self.0.as_mut() {
            writeln!(f, "{epoch},{split},{},{},{},{total}", p.data, p.pde, p.bc)?;
        }
        Ok(())
    }
}

impl Trainer<'_> {
    /// Mean loss parts over `set` without updating anything.
    pub fn measure(&self, model: &Model, set: &[Prepared]) -> Result<LossParts> {
        if set.is_empty() {
            return Ok(LossParts::default());
        }
        let parts = self.exec.try_map_range(set.len(), |k| {
            let s = &set[k];
            let y = model.forward_sample(s.input.view())?;
            let pde = match &s.pde {
                Some(ctx) => loss_pde_value(y.view(), ctx, &self.norm)?,
                None => 0.0,
            };
            Ok::<_, Error>(LossParts {
                data: loss_data(y.view(), s.target.view())?.0,
                pde,
                bc: loss_bc(y.view(), s.target.view(), &s.bc_flags, &self.norm)?.0,
            })
        })?;
        let sum = parts.iter().fold(LossParts::default(), |a, p| a.add(p));
        Ok(sum.scaled(1.0 / set.len() as f64))
    }

    fn calibrate(&self, model: &Model) -> Result<(LossWeights, LossParts)> {
        let parts = self.measure(model, self.train)?;
        let w = match self.weights {
            WeightMode::Fixed(w) => w,
            WeightMode::Auto => {
                let share = |l: f64| if l > 0.0 { AUTO_WEIGHT_SHARE * parts.data / l } else { 0.0 };
                LossWeights { data: 1.0, pde: share(parts.pde), bc: share(parts.bc) }
            }
        };
        w.validate()?;
        if w.pde > 0.0 && self.train.iter().chain(self.val).any(|s| s.pde.is_none()) {
            return Err(Error::config("equilibrium weight set but samples were prepared without a grid"));
        }
        Ok((w, parts))
    }

    fn checkpoint(&self, model: &Model, state: Option<TrainState>) -> Checkpoint {
        let mut ck = Checkpoint::from_model(model, self.init_seed, self.data_seed);
        ck.train_state = state;
        ck
    }

    pub fn run(&self, model: &mut Model, out: &TrainOutputs, resume: Option<&Checkpoint>) -> Result<TrainSummary> {
        self.run_until(model, out, resume, self.config.epochs)
    }

    /// Train through epoch `stop` (at most the configured epoch count).
    pub fn run_until(
        &self,
        model: &mut Model,
        out: &TrainOutputs,
        resume: Option<&Checkpoint>,
        stop: usize,
    ) -> Result<TrainSummary> {
        self.config.validate()?;
        if self.train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        let started = Instant::now();
        let cfg = &self.config;
        let stop = stop.min(cfg.epochs);
        let p = model.param_count();
        let mut opt = AdamW::new(p, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        let mut history = Vec::new();
        let (weights, start, mut best_val, mut best_epoch, mut log);
        match resume {
            Some(ck) => {
                let st = ck
                    .train_state
                    .as_ref()
                    .ok_or_else(|| Error::config("checkpoint has no training state to resume from"))?;
                if ck.config != model.config || ck.params.len() != p {
                    return Err(Error::config("checkpoint does not match the model configuration"));
                }
                model.params = ck.params.iter().map(|&v| f64::from(v)).collect();
                opt.step = st.step;
                opt.m = st.m.iter().map(|&v| f64::from(v)).collect();
                opt.v = st.v.iter().map(|&v| f64::from(v)).collect();
                weights = LossWeights { data: st.weights[0], pde: st.weights[1], bc: st.weights[2] };
                weights.validate()?;
                start = st.epochs_done as usize + 1;
                best_val = st.best_val;
                best_epoch = st.best_epoch as usize;
                log = Log(match &out.log {
                    Some(path) => Some(OpenOptions::new().append(true).create(true).open(path)?),
                    None => None,
                });
            }
            None => {
                for v in &mut model.params {
                    *v = adamw::round_f32(*v);
                }
                let (w, train0) = self.calibrate(model)?;
                weights = w;
                let val0 = self.measure(model, self.val)?;
                log = Log(match &out.log {
                    Some(path) => Some(File::create(path)?),
                    None => None,
                });
                let rec = EpochRecord {
                    epoch: 0,
                    train: train0,
                    train_total: train0.total(&weights),
                    val: val0,
                    val_total: val0.total(&weights),
                };
                log.line(0, "train", &rec.train, rec.train_total)?;
                log.line(0, "val", &rec.val, rec.val_total)?;
                history.push(rec);
                best_val = if self.val.is_empty() { rec.train_total } else { rec.val_total };
                best_epoch = 0;
                self.checkpoint(model, None).save(&out.checkpoint)?;
                start = 1;
            }
        }
        let state = |opt: &AdamW, epoch: usize, best_val: f64, best_epoch: usize| TrainState {
            epochs_done: epoch as u32,
            step: opt.step,
            weights: [weights.data, weights.pde, weights.bc],
            best_val,
            best_epoch: best_epoch as u32,
            m: opt.m.iter().map(|&v| v as f32).collect(),
            v: opt.v.iter().map(|&v| v as f32).collect(),
        };
        if start == 1 {
            self.checkpoint(model, Some(state(&opt, 0, best_val, best_epoch))).save(out.last_path())?;
        }

        let mut grads = vec![0.0; p];
        for epoch in start..=stop {
            let lr = cfg.learning_rate_at(epoch);
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut epoch_sum = LossParts::default();
            for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
                let per = self.exec.try_map_range(batch.len(), |k| {
                    let s = &self.train[batch[k]];
                    let (y, tape) = model.forward_tape(s.input.view())?;
                    let (parts, dy) =
                        sample_loss(y.view(), s.target.view(), &s.bc_flags, s.pde.as_ref(), &self.norm, &weights, true)?;
                    let mut g = vec![0.0; p];
                    model.backward(&tape, dy.view(), &mut g)?;
                    Ok::<_, Error>((parts, g))
                })?;
                grads.fill(0.0);
                let mut batch_sum = LossParts::default();
                for (parts, g) in &per {
                    batch_sum = batch_sum.add(parts);
                    for (a, v) in grads.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                grads.iter_mut().for_each(|g| *g *= inv);
                if !batch_sum.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    write_dump(&out.dump_path(), epoch, b, batch, &batch_sum.scaled(inv), &weights, model, &grads, opt.step)?;
                    return Err(Error::NonFinite { epoch, batch: b });
                }
                epoch_sum = epoch_sum.add(&batch_sum);
                opt.update(&mut model.params, &grads, lr);
            }
            let train = epoch_sum.scaled(1.0 / self.train.len() as f64);
            let val = self.measure(model, self.val)?;
            let rec = EpochRecord {
                epoch,
                train,
                train_total: train.total(&weights),
                val,
                val_total: val.total(&weights),
            };
            log.line(epoch, "train", &rec.train, rec.train_total)?;
            log.line(epoch, "val", &rec.val, rec.val_total)?;
            history.push(rec);
            let score = if self.val.is_empty() { rec.train_total } else { rec.val_total };
            if score < best_val {
                best_val = score;
                best_epoch = epoch;
                self.checkpoint(model, None).save(&out.checkpoint)?;
            }
            self.checkpoint(model, Some(state(&opt, epoch, best_val, best_epoch))).save(out.last_path())?;
        }
        Ok(TrainSummary { history, weights, best_epoch, best_val, seconds: started.elapsed().as_secs_f64() })
    }
}

#[allow(clippy::too_many_arguments)]
fn write_dump(
    path: &Path,
    epoch: usize,
    batch: usize,
    samples: &[usize],
    parts: &LossParts,
    w: &LossWeights,
    model: &Model,
    grads: &[f64],
    step: u64,
) -> Result<()> {
    let finite = |xs: &[f64]| xs.iter().filter(|v| v.is_finite()).count();
    let max_abs = |xs: &[f64]| xs.iter().filter(|v| v.is_finite()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut f = File::create(path)?;
    writeln!(f, "epoch={epoch}")?;
    writeln!(f, "batch={batch}")?;
    writeln!(f, "step={step}")?;
    writeln!(f, "samples={samples:?}")?;
    writeln!(f, "loss_data={}\nloss_pde={}\nloss_bc={}", parts.data, parts.pde, parts.bc)?;
    writeln!(f, "weights={},{},{}", w.data, w.pde, w.bc)?;
    writeln!(f, "params_finite={}/{}", finite(&model.params), model.params.len())?;
    writeln!(f, "params_max_abs={}", max_abs(&model.params))?;
    writeln!(f, "grads_finite={}/{}", finite(grads), grads.len())?;
    writeln!(f, "grads_max_abs={}", max_abs(grads))?;
    Ok(())
}

/// What produces the stresses being scored.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Model),
    /// Returns the reference stresses.
    Oracle,
    /// Predicts zero stress everywhere.
    Zero,
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Model(_) => "model",
            Predictor::Oracle => "oracle",
            Predictor::Zero => "zero",
        }
    }
}

/// Model prediction in pascals, `(N, T, 3)`.
pub fn predict_stress(model: &Model, sample: &DatasetSample, norm: &NormalizationSpec, force_scale: f64) -> Result<Array3<f64>> {
    let x = input_tensor(&sample.nodes, &sample.bc_flags, sample.forces.view(), force_scale)?;
    let mut y = model.forward_sample(x.view())?;
    for ((_, _, c), v) in y.indexed_iter_mut() {
        *v = norm.invert(c, *v);
    }
    Ok(y)
}

/// Reference stresses in pascals, `(N, T, 3)`.
pub fn reference_stress(sample: &DatasetSample) -> Array3<f64> {
    let (n, _, t) = sample.stress.dim();
    Array3::from_shape_fn((n, t, 3), |(i, f, c)| f64::from(sample.stress[(i, c, f)]))
}

/// Split `(N, T, 3)` stresses into flat channels with von Mises appended.
pub fn stress_channels(s: &Array3<f64>) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for row in s.lanes(Axis(2)) {
        out[0].push(row[0]);
        out[1].push(row[1]);
        out[2].push(row[2]);
        out[3].push(von_mises(row[0], row[1], row[2]));
    }
    out
}

/// Scores a predictor on the given samples; metrics are computed per sample
/// and averaged. Inference time is measured one sample at a time.
pub fn evaluate(
    predictor: Predictor,
    samples: &[DatasetSample],
    indices: &[usize],
    norm: &NormalizationSpec,
    force_scale: f64,
    split: &str,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::config(format!("split `{split}` is empty")));
    }
    let mut mae_sum = [0.0; 4];
    let mut mrpe_sum = [0.0; 4];
    let mut zero_sum = [0.0; 4];
    let mut infer_ms = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = samples
            .get(i)
            .ok_or_else(|| Error::config(format!("sample index {i} out of range")))?;
        let truth = reference_stress(sample);
        let t0 = Instant::now();
        let pred = match predictor {
            Predictor::Model(m) => predict_stress(m, sample, norm, force_scale)?,
            Predictor::Oracle => truth.clone(),
            Predictor::Zero => Array3::zeros(truth.dim()),
        };
        infer_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let tc = stress_channels(&truth);
        let pc = stress_channels(&pred);
        let zeros = vec![0.0; tc[0].len()];
        for c in 0..4 {
            mae_sum[c] += mae(&pc[c], &tc[c])?;
            mrpe_sum[c] += mrpe(&pc[c], &tc[c])?;
            zero_sum[c] += mrpe(&zeros, &tc[c])?;
        }
    }
    let k = 1.0 / indices.len() as f64;
    Ok(EvalReport {
        predictor: predictor.name().into(),
        split: split.into(),
        samples: indices.len(),
        mae: mae_sum.map(|v| v * k),
        mrpe: mrpe_sum.map(|v| v * k),
        zero_mrpe: zero_sum.map(|v| v * k),
        infer_ms,
    })
}
