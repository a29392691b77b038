//! `stressfield`: dataset generation, training, evaluation, prediction and
//! rendering.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stressfield::bitmap::{field_to_rgb, write_bmp};
use stressfield::dataset::{self, read_header, DatasetSample, Manifest, Part, Scale, SplitPreset};
use stressfield::exec::{init_threads_from_env, Exec};
use stressfield::fem::von_mises;
use stressfield::grid::{grid_operator_for_mesh, read_raster, write_raster, RasterChannel, DEFAULT_GRID_SIZE};
use stressfield::model::{Checkpoint, Model, ModelConfig, Variant, DEFAULT_WIDTH};
use stressfield::train::{
    evaluate, predict_stress, prepare_samples, reference_stress, LossWeights, Predictor, TrainConfig, TrainOutputs,
    Trainer, WeightMode, TRAIN_PDE_GRID,
};

#[derive(Parser)]
#[command(name = "stressfield", version, about = "Dynamic stress prediction for gusset plates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write the container plus its manifest.
    Generate(GenerateArgs),
    /// Train a model; writes the best checkpoint, `<out>.last` and a log.
    Train(TrainArgs),
    /// Score a checkpoint (or the reference itself) on a split.
    Eval(EvalArgs),
    /// Write predicted stresses of one sample as CSV.
    Predict(PredictArgs),
    /// Render one frame of a sample as grid rasters, bitmaps and CSV.
    Render(RenderArgs),
    /// Print the header of a container, checkpoint or raster.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "baseline")]
    preset: SplitPreset,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "spatiotempo-lstm")]
    variant: Variant,
    /// `w_data,w_pde,w_bc`, or `auto` to calibrate the last two.
    #[arg(long, default_value = "auto")]
    weights: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Hidden width.
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = TRAIN_PDE_GRID)]
    pde_grid: usize,
    /// Log path; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a `<out>.last` checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Part,
    /// Score the reference stresses instead of a model.
    #[arg(long)]
    oracle: bool,
    /// Report path; defaults to `<ckpt>.<split>.eval` (or `<data>.oracle.<split>.eval`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    sample: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sample: usize,
    #[arg(long)]
    frame: usize,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid: usize,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

/// Error with an exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<stressfield::Error> for Failure {
    fn from(e: stressfield::Error) -> Self {
        use std::io::ErrorKind;
        use stressfield::Error as E;
        let code = match &e {
            E::Config(_) | E::Format { .. } | E::Shape(_) => 2,
            E::Io(io) if matches!(
                io.kind(),
                ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::UnexpectedEof | ErrorKind::InvalidData
            ) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        stressfield::Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("STRESSFIELD_THREADS") {
        if !matches!(v.trim().parse::<usize>(), Ok(n) if n > 0) {
            eprintln!("error: STRESSFIELD_THREADS must be a positive integer, got `{v}`");
            return ExitCode::from(2);
        }
        init_threads_from_env();
    }
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Render(a) => render(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn generate(a: GenerateArgs) -> Outcome {
    let m = dataset::generate(&a.out, a.scale, a.seed, a.preset, Exec::default())?;
    println!(
        "wrote {} samples to {} (manifest {})",
        m.sample_count,
        a.out.display(),
        Manifest::path_for(&a.out).display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<(Manifest, Vec<DatasetSample>), Failure> {
    if !path.exists() {
        return Err(usage(format!("data file {} does not exist", path.display())));
    }
    Ok(dataset::load_dataset(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: TrainArgs) -> Outcome {
    let weights = if a.weights.trim() == "auto" {
        WeightMode::Auto
    } else {
        WeightMode::Fixed(LossWeights::parse(&a.weights)?)
    };
    let (manifest, samples) = load(&a.data)?;
    let epochs = a.epochs.unwrap_or(match manifest.scale {
        Scale::Desk => stressfield::train::DESK_EPOCHS,
        Scale::Full => stressfield::train::FULL_EPOCHS,
    });
    let mut config = TrainConfig::new(epochs, a.seed);
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
        config.min_learning_rate = lr * 1e-2;
    }
    if let Some(b) = a.batch {
        config.batch_size = b;
    }
    config.pde_grid = a.pde_grid;
    config.validate()?;
    let model_config = ModelConfig::new(a.variant, a.width);
    model_config.validate()?;
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;

    let needs_grid = match weights {
        WeightMode::Auto => true,
        WeightMode::Fixed(w) => w.pde > 0.0,
    };
    let grid = needs_grid.then_some(config.pde_grid);
    let exec = Exec::default();
    let train_set = prepare_samples(&samples, manifest.split.part(Part::Train), &manifest, grid, exec)?;
    let val_set = prepare_samples(&samples, manifest.split.part(Part::Val), &manifest, grid, exec)?;
    let trainer = Trainer {
        config,
        weights,
        train: &train_set,
        val: &val_set,
        norm: manifest.normalization,
        init_seed: a.seed,
        data_seed: manifest.master_seed,
        exec,
    };
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log"));
    let out = TrainOutputs::new(&a.out).with_log(&log);
    let mut model = Model::new(model_config, a.seed)?;
    let summary = trainer.run(&mut model, &out, resume.as_ref())?;
    let w = summary.weights;
    println!(
        "trained {} epochs in {:.1}s; weights {},{},{}; best epoch {} (val total {})",
        summary.history.last().map_or(0, |r| r.epoch),
        summary.seconds,
        w.data,
        w.pde,
        w.bc,
        summary.best_epoch,
        summary.best_val
    );
    println!("checkpoint {} (latest {}), log {}", a.out.display(), out.last_path().display(), log.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (manifest, samples) = load(&a.data)?;
    let indices = manifest.split.part(a.split);
    let norm = &manifest.normalization;
    let split = a.split.to_string();
    let (report, default_out) = if a.oracle {
        let r = evaluate(Predictor::Oracle, &samples, indices, norm, manifest.force_scale, &split)?;
        (r, with_suffix(&a.data, &format!(".oracle.{split}.eval")))
    } else {
        let ckpt_path = a.ckpt.as_deref().expect("required unless oracle");
        let model = load_checkpoint(ckpt_path)?.model()?;
        let r = evaluate(Predictor::Model(&model), &samples, indices, norm, manifest.force_scale, &split)?;
        (r, with_suffix(ckpt_path, &format!(".{split}.eval")))
    };
    let out = a.out.unwrap_or(default_out);
    report.write(&out)?;
    print!("{}", report.to_text());
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn sample_at(samples: &[DatasetSample], id: usize) -> Result<&DatasetSample, Failure> {
    samples
        .get(id)
        .ok_or_else(|| usage(format!("sample {id} out of range (dataset holds {})", samples.len())))
}

/// `node,t,sxx,syy,sxy,svm` for every node and frame of `(N, T, 3)` stresses.
fn write_stress_csv(path: &Path, s: &ndarray::Array3<f64>) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "node,t,sxx,syy,sxy,svm")?;
    let (n, t, _) = s.dim();
    for i in 0..n {
        for f in 0..t {
            let (a, b, c) = (s[(i, f, 0)], s[(i, f, 1)], s[(i, f, 2)]);
            writeln!(w, "{i},{f},{a},{b},{c},{}", von_mises(a, b, c))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn predict(a: PredictArgs) -> Outcome {
    let (manifest, samples) = load(&a.data)?;
    let model = load_checkpoint(&a.ckpt)?.model()?;
    let sample = sample_at(&samples, a.sample)?;
    let pred = predict_stress(&model, sample, &manifest.normalization, manifest.force_scale)?;
    write_stress_csv(&a.out, &pred)?;
    println!("wrote {} rows to {}", pred.dim().0 * pred.dim().1, a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Outcome {
    let (manifest, samples) = load(&a.data)?;
    let sample = sample_at(&samples, a.sample)?;
    let frames = sample.num_frames();
    if a.frame >= frames {
        return Err(usage(format!("frame {} out of range (sample has {frames} frames)", a.frame)));
    }
    let model = a.ckpt.as_deref().map(load_checkpoint).transpose()?.map(|c| c.model()).transpose()?;
    std::fs::create_dir_all(&a.out)?;
    let op = grid_operator_for_mesh(&sample.mesh(), a.grid)?;
    let mut sets = vec![("truth", reference_stress(sample))];
    if let Some(m) = &model {
        sets.push(("pred", predict_stress(m, sample, &manifest.normalization, manifest.force_scale)?));
    }
    let channels = [
        ("sxx", RasterChannel::Sxx),
        ("syy", RasterChannel::Syy),
        ("sxy", RasterChannel::Sxy),
        ("svm", RasterChannel::VonMises),
    ];
    for (name, stress) in &sets {
        let n = sample.num_nodes();
        let lifted: Vec<Vec<f64>> = (0..3)
            .map(|c| op.lift(&(0..n).map(|i| stress[(i, a.frame, c)]).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()?;
        let vm: Vec<f64> = (0..op.num_cells())
            .map(|k| if op.mask[k] { von_mises(lifted[0][k], lifted[1][k], lifted[2][k]) } else { 0.0 })
            .collect();
        for (c, (ch, id)) in channels.iter().enumerate() {
            let field = if c < 3 { &lifted[c] } else { &vm };
            let stem = a.out.join(format!("{name}_{ch}_f{}", a.frame));
            write_raster(BufWriter::new(File::create(stem.with_extension("grid"))?), op.size, *id, field)?;
            let pixels = field_to_rgb(field, &op.mask, op.size)?;
            write_bmp(BufWriter::new(File::create(stem.with_extension("bmp"))?), op.size, op.size, &pixels)?;
        }
        write_stress_csv(&a.out.join(format!("{name}.csv")), stress)?;
    }
    println!(
        "rendered sample {} frame {} ({}) on a {}×{} grid into {}",
        a.sample,
        a.frame,
        sets.iter().map(|s| s.0).collect::<Vec<_>>().join(", "),
        op.size,
        op.size,
        a.out.display()
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    let mut magic = [0u8; 4];
    {
        let mut f = File::open(&a.path)?;
        f.read_exact(&mut magic)
            .map_err(|_| usage(format!("{} is too short to identify", a.path.display())))?;
    }
    match &magic {
        b"SPND" => {
            let h = read_header(&a.path)?;
            println!("magic=SPND");
            println!("version={}", h.version);
            println!("count={}", h.count);
            let mpath = Manifest::path_for(&a.path);
            if mpath.exists() {
                println!("manifest={}", mpath.display());
            }
        }
        b"STMC" => {
            let c = Checkpoint::load(&a.path)?;
            println!("magic=STMC");
            println!("variant={}", c.config.variant);
            println!("d={}", c.config.d);
            println!("blocks={}", c.config.blocks);
            println!("mlp_width={}", c.config.mlp_width);
            println!("mlp_max_nodes={}", c.config.mlp_max_nodes);
            println!("init_seed={}", c.init_seed);
            println!("data_seed={}", c.data_seed);
            println!("params={}", c.params.len());
            match &c.train_state {
                Some(s) => {
                    println!("epochs_done={}", s.epochs_done);
                    println!("step={}", s.step);
                    println!("weights={},{},{}", s.weights[0], s.weights[1], s.weights[2]);
                    println!("best_val={}", s.best_val);
                    println!("best_epoch={}", s.best_epoch);
                }
                None => println!("train_state=none"),
            }
        }
        b"GRID" => {
            let (size, channel, values) = read_raster(File::open(&a.path)?)?;
            println!("magic=GRID");
            println!("size={size}");
            println!("channel={channel:?}");
            println!("values={}", values.len());
        }
        _ => return Err(usage(format!("{}: unrecognized file type", a.path.display()))),
    }
    Ok(())
}
