//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain program (`harness = false`) so the summary is always
//! printed. Criterion 7 trains six desk-scale models and dominates the
//! runtime; set `STRESSFIELD_SKIP_TRAINING=1` to report it as skipped.

use std::collections::HashSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra_sparse::{CooMatrix, CscMatrix};
use ndarray::{s, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stressfield::dataset::{
    generate, generate_samples, load_dataset, make_split, BcCase, DatasetPlan, DatasetSample, GenerationConfig,
    Manifest, NormalizationSpec, SampleKey, Scale, SplitPreset,
};
use stressfield::exec::Exec;
use stressfield::fem::{assemble, newmark_solve, recover_stress, static_solve, Material, SystemMatrices};
use stressfield::geometry::{sample_polygon, PerturbationConfig, Point};
use stressfield::grid::{
    grid_operator_for_mesh, pde_residual, GridOperator, ResidualInputs, ResidualJacobian, DEFAULT_GRID_SIZE,
    KERNEL_CUTOFF,
};
use stressfield::mesh::{triangulate, triangulate_outline, Mesh, DEFAULT_EDGE_LENGTH};
use stressfield::model::{param_count, Checkpoint, Model, ModelConfig, Variant};
use stressfield::train::{
    evaluate, mae, mrpe, prepare_samples, sample_loss, LossWeights, Predictor, Prepared, TrainConfig, TrainOutputs,
    Trainer, WeightMode, DESK_EPOCHS, DESK_WIDTH, TRAIN_PDE_GRID,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const DATA_SEED: u64 = 2024;
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = dir.path().join("desk.spnd");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let started = Instant::now();
        let out = f();
        eprintln!("criterion {n} finished in {:.1} s", started.elapsed().as_secs_f64());
        results.push((n, name, out));
    };

    run(1, "FEM patch test", &patch_test);
    run(2, "Newmark verification", &newmark);
    run(3, "residual operator", &residual_operator);
    run(4, "kernel reconstruction", &kernel_reconstruction);
    run(5, "architecture contracts", &architecture);
    run(6, "dataset contracts", &|| dataset_contracts(&data));
    run(7, "desk-scale training", &|| desk_training(&data, dir.path()));
    run(8, "metrics", &metrics);
    run(9, "determinism", &|| determinism(&data, dir.path()));

    println!();
    let mut failed = 0;
    for (n, name, out) in &results {
        match out {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// 1 ------------------------------------------------------------------------

fn patch_test() -> Outcome {
    let started = Instant::now();
    let (len, width) = (0.4, 0.2);
    let mesh = triangulate_outline(&[[0.0, 0.0], [len, 0.0], [len, width], [0.0, width]], 0.03).map_err(fail)?;
    let mat = Material::steel();
    let mut sys = assemble(&mesh, &mat).map_err(fail)?;
    let total = 10e3;
    let mut right: Vec<usize> = (0..mesh.num_nodes()).filter(|&n| (mesh.nodes[n][0] - len).abs() < 1e-12).collect();
    right.sort_by(|&a, &b| mesh.nodes[a][1].total_cmp(&mesh.nodes[b][1]));
    let mut f = vec![0.0; sys.num_dofs()];
    for w in right.windows(2) {
        let share = total * (mesh.nodes[w[1]][1] - mesh.nodes[w[0]][1]) / width / 2.0;
        f[2 * w[0]] += share;
        f[2 * w[1]] += share;
    }
    for (n, p) in mesh.nodes.iter().enumerate() {
        if p[0].abs() < 1e-12 {
            sys.fixed[2 * n] = true;
            if p[1].abs() < 1e-12 {
                sys.fixed[2 * n + 1] = true;
            }
        }
    }
    let u = static_solve(&sys, &f).map_err(fail)?;
    let stress = recover_stress(&mesh, &mat, &u).map_err(fail)?;
    let expected = total / (width * mat.thickness);
    let boundary = mesh.boundary_nodes();
    let (mut worst_xx, mut worst_other, mut interior) = (0.0_f64, 0.0_f64, 0);
    for (v, _) in stress.iter().zip(&boundary).filter(|(_, b)| !**b) {
        interior += 1;
        worst_xx = worst_xx.max((v[0] - expected).abs() / expected);
        worst_other = worst_other.max(v[1].abs().max(v[2].abs()) / expected);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(interior > 0, "no interior nodes");
    ensure!(worst_xx <= 0.02, "sxx deviates {:.3}% from F/(w t)", 100.0 * worst_xx);
    ensure!(worst_other <= 0.02, "syy/sxy reach {:.3}% of sxx", 100.0 * worst_other);
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!(
        "{interior} interior nodes, max sxx error {:.2e}%, max |syy|,|sxy| {:.2e}% of sxx, {secs:.2} s",
        100.0 * worst_xx,
        100.0 * worst_other
    ))
}

// 2 ------------------------------------------------------------------------

fn oscillator(dt: f64, steps: usize) -> Result<Vec<f64>, String> {
    let (k, m, f, w) = (4.0 * std::f64::consts::PI.powi(2), 1.0, 1.0, 2.0 * std::f64::consts::PI * 2.3);
    let mut coo = CooMatrix::new(1, 1);
    coo.push(0, 0, k);
    let sys = SystemMatrices::from_parts(CscMatrix::from(&coo), vec![m], vec![false]).map_err(fail)?;
    let load = Array2::from_shape_fn((1, steps), |(_, n)| f * (w * n as f64 * dt).sin());
    let r = newmark_solve(&sys, load.view(), dt).map_err(fail)?;
    Ok(r.displacement.column(0).to_vec())
}

fn newmark() -> Outcome {
    let (k, m, f, w) = (4.0 * std::f64::consts::PI.powi(2), 1.0, 1.0, 2.0 * std::f64::consts::PI * 2.3);
    let wn = (k / m).sqrt();
    let exact = |t: f64| f / (k - m * w * w) * ((w * t).sin() - w / wn * (wn * t).sin());
    let dt = 0.01;
    let u = oscillator(dt, 100)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (n, v) in u.iter().enumerate() {
        let e = exact(n as f64 * dt);
        num += (v - e).powi(2);
        den += e * e;
    }
    let rel = (num / den).sqrt();

    let at_end = |h: f64| -> Result<f64, String> { Ok(*oscillator(h, (1.0 / h).round() as usize + 1)?.last().unwrap()) };
    let reference = at_end(0.02 / 16.0)?;
    let e1 = (at_end(0.02)? - reference).abs();
    let e2 = (at_end(0.01)? - reference).abs();
    let order = (e1 / e2).log2();
    ensure!(rel < 0.01, "relative L2 {rel:.4}");
    ensure!(order >= 1.9, "convergence order {order:.3}");
    Ok(format!("relative L2 {:.3}% over 100 steps, order {order:.3}", 100.0 * rel))
}

// 3 ------------------------------------------------------------------------

fn pentagon(index: u32) -> Result<Mesh, String> {
    let poly = sample_polygon(index, 3, &PerturbationConfig::default()).map_err(fail)?;
    triangulate(&poly, DEFAULT_EDGE_LENGTH).map_err(fail)
}

fn nodal(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.nodes.iter().map(|p| f(p[0], p[1])).collect()
}

/// Kernel-lifted value at `p`, recomputed from the Gaussian formula.
fn dense_lift(nodes: &[Point], values: &[f64], bandwidth: f64, p: Point) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (q, v) in nodes.iter().zip(values) {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2.sqrt() <= KERNEL_CUTOFF * bandwidth {
            let w = (-d2 / (2.0 * bandwidth * bandwidth)).exp();
            num += w * v;
            den += w;
        }
    }
    num / den
}

fn residual_operator() -> Outcome {
    // σxx = c·x balanced by b_x = −c: whatever remains is the discretization
    // floor, evaluated independently with a dense kernel and central differences.
    let mesh = pentagon(11)?;
    let op = grid_operator_for_mesh(&mesh, 64).map_err(fail)?;
    let n = mesh.num_nodes();
    let c = 2.5e7;
    let sxx = nodal(&mesh, |x, _| c * x);
    let zero = vec![0.0; n];
    let r = pde_residual(
        &ResidualInputs {
            sxx: &sxx,
            syy: &zero,
            sxy: &zero,
            body: &vec![[-c, 0.0]; n],
            accel: &vec![[0.0; 2]; n],
            density: 7850.0,
        },
        &op,
    )
    .map_err(fail)?;
    let xs = nodal(&mesh, |x, _| x);
    let interior = op.interior_mask();
    let mut worst = 0.0_f64;
    let mut cells = 0;
    for k in (0..op.num_cells()).filter(|&k| interior[k]) {
        let (i, j) = (k / op.size, k % op.size);
        let slope = (dense_lift(&mesh.nodes, &xs, op.bandwidth, op.cell_center(i, j + 1))
            - dense_lift(&mesh.nodes, &xs, op.bandwidth, op.cell_center(i, j - 1)))
            / (2.0 * op.hx);
        let floor = c * (slope - 1.0);
        worst = worst.max((r.rx[k] - floor).abs()).max(r.ry[k].abs());
        cells += 1;
    }
    ensure!(worst <= 1e-6 * c, "residual exceeds floor by {:.3e}·|c|", worst / c);

    // Residual is linear in stress; compare its directional finite difference
    // with the assembled Jacobian.
    let mesh = pentagon(8)?;
    let op = grid_operator_for_mesh(&mesh, 32).map_err(fail)?;
    let jac = ResidualJacobian::assemble(&op);
    let n = mesh.num_nodes();
    let sxx = nodal(&mesh, |x, y| 1e6 * (x * x - y));
    let syy = nodal(&mesh, |x, y| 3e5 * (x + 2.0 * y * y));
    let sxy = nodal(&mesh, |x, y| -2e5 * x * y);
    let zz = vec![[0.0; 2]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dirs: [Vec<f64>; 3] = std::array::from_fn(|_| (0..n).map(|_| rng.random_range(-5e4..5e4)).collect());
    let eps = 1e-3;
    let eval = |s: f64| {
        let shift = |base: &[f64], d: &[f64]| -> Vec<f64> { base.iter().zip(d).map(|(a, b)| a + s * b).collect() };
        let (a, b, c) = (shift(&sxx, &dirs[0]), shift(&syy, &dirs[1]), shift(&sxy, &dirs[2]));
        pde_residual(&ResidualInputs { sxx: &a, syy: &b, sxy: &c, body: &zz, accel: &zz, density: 7850.0 }, &op)
    };
    let (plus, minus) = (eval(eps).map_err(fail)?, eval(-eps).map_err(fail)?);
    let (jx, jy) = jac.apply(&dirs[0], &dirs[1], &dirs[2]);
    let (mut diff, mut norm) = (0.0, 0.0);
    for k in 0..op.num_cells() {
        let fx = (plus.rx[k] - minus.rx[k]) / (2.0 * eps);
        let fy = (plus.ry[k] - minus.ry[k]) / (2.0 * eps);
        diff += (fx - jx[k]).powi(2) + (fy - jy[k]).powi(2);
        norm += jx[k].powi(2) + jy[k].powi(2);
    }
    let rel = (diff / norm).sqrt();
    ensure!(rel <= 1e-6, "Jacobian vs finite differences {rel:.3e}");
    Ok(format!(
        "{cells} interior cells within {:.1e}·|c| of the floor, Jacobian relative error {rel:.1e}",
        worst / c
    ))
}

// 4 ------------------------------------------------------------------------

fn round_trip(op: &GridOperator, nodes: &[Point], f: &[f64]) -> Result<f64, String> {
    let lifted = op.lift(f).map_err(fail)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in nodes.iter().zip(f) {
        let j = ((p[0] - op.origin[0]) / op.hx).round() as usize;
        let i = ((p[1] - op.origin[1]) / op.hy).round() as usize;
        num += (lifted[op.index(i, j)] - v).powi(2);
        den += v * v;
    }
    Ok((num / den).sqrt())
}

fn kernel_reconstruction() -> Outcome {
    let (mut pou, mut worst_trip) = (0.0_f64, 0.0_f64);
    for index in [1, 200, 513, 777, 1024] {
        let mesh = pentagon(index)?;
        let op = grid_operator_for_mesh(&mesh, DEFAULT_GRID_SIZE).map_err(fail)?;
        let lifted = op.lift(&vec![3.7; mesh.num_nodes()]).map_err(fail)?;
        for (v, m) in lifted.iter().zip(&op.mask) {
            if *m {
                pou = pou.max((v - 3.7).abs() / 3.7);
            }
        }
        let f = nodal(&mesh, |x, y| 1e6 * ((4.0 * x).sin() + (3.0 * y).cos()));
        worst_trip = worst_trip.max(round_trip(&op, &mesh.nodes, &f)?);
    }
    ensure!(pou <= 1e-9, "constant field reproduced to {pou:.2e}");
    ensure!(worst_trip <= 0.05, "round trip {:.2}%", 100.0 * worst_trip);
    Ok(format!(
        "partition of unity to {pou:.1e}, worst nodal round trip {:.2}% over 5 meshes",
        100.0 * worst_trip
    ))
}

// 5 ------------------------------------------------------------------------

fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn architecture() -> Outcome {
    let count = param_count(&ModelConfig::new(Variant::SpatiotempoLstm, 64));
    ensure!((200_000..=216_000).contains(&count), "parameter count {count}");

    let full = Model::new(ModelConfig::default(), 3).map_err(fail)?;
    let x = random4((2, 150, 100, 5), 1);
    ensure!(full.encode(x.view()).map_err(fail)?.dim() == (2, 150, 100, 64), "encoder shape");
    ensure!(
        full.decode(random4((1, 150, 100, 64), 2).view()).map_err(fail)?.dim() == (1, 150, 100, 3),
        "head shape"
    );
    ensure!(full.encode(random4((1, 4, 4, 64), 2).view()).is_err(), "wrong channel count accepted");

    let small = random4((1, 5, 8, 5), 4);
    for v in [Variant::SpatiotempoLstm, Variant::TempoLstm] {
        let model = Model::new(ModelConfig::new(v, 6), 13).map_err(fail)?;
        ensure!(model.forward(small.view()).map_err(fail)?.dim() == (1, 5, 8, 3), "{v} output shape");
        let f = random4((1, 4, 8, 6), 5);
        let base = model.temporal_stage(1, f.view()).map_err(fail)?;
        let mut g = f.clone();
        g.slice_mut(s![.., .., 4.., ..]).mapv_inplace(|v| v + 0.7);
        let pert = model.temporal_stage(1, g.view()).map_err(fail)?;
        ensure!(base.slice(s![.., .., ..4, ..]) == pert.slice(s![.., .., ..4, ..]), "{v} temporal stage not causal");
        ensure!(base.slice(s![.., .., 4, ..]) != pert.slice(s![.., .., 4, ..]), "{v} ignores its current frame");
    }

    let tempo = Model::new(ModelConfig::new(Variant::TempoLstm, 6), 17).map_err(fail)?;
    let base = tempo.forward(small.view()).map_err(fail)?;
    let mut y = small.clone();
    y.slice_mut(s![0, 2, .., ..]).mapv_inplace(|v| 0.3 - 1.5 * v);
    let pert = tempo.forward(y.view()).map_err(fail)?;
    for n in 0..5 {
        let same = base.slice(s![0, n, .., ..]) == pert.slice(s![0, n, .., ..]);
        ensure!(same == (n != 2), "node independence broken at node {n}");
    }

    let stm = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 6), 17).map_err(fail)?;
    let base = stm.forward(small.view()).map_err(fail)?;
    let pert = stm.forward(y.view()).map_err(fail)?;
    ensure!(base.slice(s![0, 3, .., ..]) != pert.slice(s![0, 3, .., ..]), "STM does not mix nodes");

    let mut cfg = ModelConfig::new(Variant::SpatioMlp, 1);
    cfg.mlp_width = 12;
    cfg.mlp_max_nodes = 10;
    let mlp = Model::new(cfg, 19).map_err(fail)?;
    let x = random4((2, 6, 5, 5), 8);
    let base = mlp.forward(x.view()).map_err(fail)?;
    let mut y = x.clone();
    y.slice_mut(s![.., .., 3, ..]).mapv_inplace(|v| v + 1.0);
    let pert = mlp.forward(y.view()).map_err(fail)?;
    for t in 0..5 {
        let same = base.slice(s![.., .., t, ..]) == pert.slice(s![.., .., t, ..]);
        ensure!(same == (t != 3), "MLP frame independence broken at frame {t}");
    }
    ensure!(mlp.forward(random4((1, 11, 2, 5), 1).view()).is_err(), "MLP accepted too many nodes");

    let worst = loss_gradient_check()?;
    ensure!(worst <= 1e-4, "loss gradient relative error {worst:.2e}");
    Ok(format!("{count} parameters at d=64, probes pass, loss gradient relative error {worst:.1e}"))
}

/// Total loss (all three terms) of a tiny model on a tiny sample, checked
/// against central differences for a spread of parameters.
fn loss_gradient_check() -> Result<f64, String> {
    let mut cfg = GenerationConfig::new(21);
    cfg.edge_length = 0.08;
    let key = SampleKey { geometry_id: 2, bc_case: BcCase::E3, load_case: 6 };
    let samples = generate_samples(&[key], &cfg, Exec::Sequential).map_err(fail)?;
    let norm = NormalizationSpec::fit([samples[0].stress.view()]).map_err(fail)?;
    let split = make_split(SplitPreset::Baseline, &[key], 21);
    let manifest = Manifest::new(&cfg, Scale::Desk, 1, norm, split);
    let p = Prepared::new(&samples[0], &manifest, Some(10)).map_err(fail)?;
    let w = LossWeights { data: 1.0, pde: 0.2, bc: 0.5 };
    let mut worst = 0.0_f64;
    for variant in [Variant::SpatiotempoLstm, Variant::TempoLstm] {
        let model = Model::new(ModelConfig::new(variant, 3), 8).map_err(fail)?;
        let total = |m: &Model| -> Result<f64, String> {
            let y = m.forward_sample(p.input.view()).map_err(fail)?;
            let (parts, _) =
                sample_loss(y.view(), p.target.view(), &p.bc_flags, p.pde.as_ref(), &norm, &w, true).map_err(fail)?;
            Ok(parts.total(&w))
        };
        let (y, tape) = model.forward_tape(p.input.view()).map_err(fail)?;
        let (_, dy) =
            sample_loss(y.view(), p.target.view(), &p.bc_flags, p.pde.as_ref(), &norm, &w, false).map_err(fail)?;
        let mut grads = vec![0.0; model.param_count()];
        model.backward(&tape, dy.view(), &mut grads).map_err(fail)?;
        let scale = grads.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let n = model.param_count();
        let eps = 1e-6;
        for k in (0..n).step_by(n / 16).chain([n - 1]) {
            let mut m = model.clone();
            m.params[k] += eps;
            let up = total(&m)?;
            m.params[k] -= 2.0 * eps;
            let down = total(&m)?;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max((fd - grads[k]).abs() / scale);
        }
    }
    Ok(worst)
}

// 6 ------------------------------------------------------------------------

fn dataset_contracts(data: &Path) -> Outcome {
    let started = Instant::now();
    generate(data, Scale::Desk, DATA_SEED, SplitPreset::Load, Exec::default()).map_err(fail)?;
    let gen_secs = started.elapsed().as_secs_f64();
    let (manifest, samples) = load_dataset(data).map_err(fail)?;
    ensure!(samples.len() == 288 && manifest.sample_count == 288, "desk preset has {} samples", samples.len());
    for s in &samples {
        ensure!(s.stress.index_axis(Axis(2), 0).iter().all(|&v| v == 0.0), "{:?} frame 0 stress is not zero", s.key);
    }

    let full = DatasetPlan::for_scale(Scale::Full).keys();
    ensure!(full.len() == 14 * 1024 * 5 && full.len() == 71_680, "full plan has {} samples", full.len());
    let parts = |preset: SplitPreset| {
        let sp = make_split(preset, &full, 1);
        [sp.train, sp.val, sp.test]
    };
    let values = |idx: &[usize], f: &dyn Fn(&SampleKey) -> u32| idx.iter().map(|&i| f(&full[i])).collect::<HashSet<_>>();
    let range = |a: u32, b: u32| (a..=b).collect::<HashSet<_>>();

    let [tr, va, te] = parts(SplitPreset::Geometry);
    let geo = |k: &SampleKey| k.geometry_id;
    ensure!(
        values(&tr, &geo) == range(1, 614) && values(&va, &geo) == range(615, 819) && values(&te, &geo) == range(820, 1024),
        "geometry preset ranges"
    );
    let [tr, va, te] = parts(SplitPreset::Load);
    let load = |k: &SampleKey| k.load_case;
    ensure!(
        values(&tr, &load) == range(1, 8) && values(&va, &load) == range(9, 11) && values(&te, &load) == range(12, 14),
        "load preset ranges"
    );
    let [tr, va, te] = parts(SplitPreset::Bc);
    let bc = |k: &SampleKey| u32::from(k.bc_case.id());
    let ids = |cases: &[BcCase]| cases.iter().map(|c| u32::from(c.id())).collect::<HashSet<_>>();
    ensure!(
        values(&tr, &bc) == ids(&[BcCase::E2, BcCase::E2E3, BcCase::E1E2])
            && values(&va, &bc) == ids(&[BcCase::E3])
            && values(&te, &bc) == ids(&[BcCase::E1E5]),
        "boundary preset sets"
    );
    let [tr, va, te] = parts(SplitPreset::Baseline);
    ensure!((tr.len(), va.len(), te.len()) == (43_008, 14_336, 14_336), "baseline 60/20/20 sizes");

    let d = &manifest.split;
    Ok(format!(
        "288 samples in {gen_secs:.0} s, frame 0 zero everywhere, 71,680 full-scale, presets exact, desk load split {}/{}/{}",
        d.train.len(),
        d.val.len(),
        d.test.len()
    ))
}

// 7 ------------------------------------------------------------------------

struct RunResult {
    seconds: f64,
    monotone_after_5: bool,
    train_total: Vec<f64>,
    test_svm_mrpe: f64,
}

fn train_one(
    samples: &[DatasetSample],
    manifest: &Manifest,
    train: &[Prepared],
    val: &[Prepared],
    seed: u64,
    weights: WeightMode,
    out: &Path,
) -> Result<RunResult, String> {
    let mut config = TrainConfig::new(DESK_EPOCHS, seed);
    config.pde_grid = TRAIN_PDE_GRID;
    let trainer = Trainer {
        config,
        weights,
        train,
        val,
        norm: manifest.normalization,
        init_seed: seed,
        data_seed: manifest.master_seed,
        exec: Exec::default(),
    };
    let mut model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, DESK_WIDTH), seed).map_err(fail)?;
    let outputs = TrainOutputs::new(out).with_log(out.with_extension("log"));
    let summary = trainer.run(&mut model, &outputs, None).map_err(fail)?;
    let train_total: Vec<f64> = summary.history.iter().map(|r| r.train_total).collect();
    let monotone_after_5 = train_total[5..].windows(2).all(|w| w[1] <= w[0]);
    let best = Checkpoint::load(out).map_err(fail)?.model().map_err(fail)?;
    let report = evaluate(
        Predictor::Model(&best),
        samples,
        &manifest.split.test,
        &manifest.normalization,
        manifest.force_scale,
        "test",
    )
    .map_err(fail)?;
    Ok(RunResult { seconds: summary.seconds, monotone_after_5, train_total, test_svm_mrpe: report.mrpe[3] })
}

fn desk_training(data: &Path, dir: &Path) -> Outcome {
    if std::env::var_os("STRESSFIELD_SKIP_TRAINING").is_some() {
        return Err("skipped (STRESSFIELD_SKIP_TRAINING is set)".into());
    }
    let (manifest, samples) = load_dataset(data).map_err(fail)?;
    ensure!(samples.len() == 288, "dataset has {} samples", samples.len());
    let grid = Some(TRAIN_PDE_GRID);
    let train = prepare_samples(&samples, &manifest.split.train, &manifest, grid, Exec::default()).map_err(fail)?;
    let val = prepare_samples(&samples, &manifest.split.val, &manifest, grid, Exec::default()).map_err(fail)?;
    let zero = evaluate(Predictor::Zero, &samples, &manifest.split.test, &manifest.normalization, 1.0, "test")
        .map_err(fail)?;

    let mut wins = 0;
    let mut monotone = 0;
    let mut slowest = 0.0_f64;
    let mut lines = Vec::new();
    for seed in TRAIN_SEEDS {
        let data_only = train_one(
            &samples,
            &manifest,
            &train,
            &val,
            seed,
            WeightMode::Fixed(LossWeights::DATA_ONLY),
            &dir.join(format!("mae{seed}.ckpt")),
        )?;
        let physics = train_one(&samples, &manifest, &train, &val, seed, WeightMode::Auto, &dir.join(format!("phy{seed}.ckpt")))?;
        for (name, r) in [("data-only", &data_only), ("physics", &physics)] {
            slowest = slowest.max(r.seconds);
            monotone += usize::from(r.monotone_after_5);
            let t = &r.train_total;
            eprintln!(
                "seed {seed} {name}: {:.0} s, train total {:.4} -> {:.4} (epoch 5) -> {:.4}, monotone after 5: {}, test svm MRPE {:.3}%",
                r.seconds,
                t[0],
                t[5],
                t[t.len() - 1],
                r.monotone_after_5,
                r.test_svm_mrpe
            );
        }
        let win = physics.test_svm_mrpe <= data_only.test_svm_mrpe;
        wins += usize::from(win);
        lines.push(format!("seed {seed} {:.2}% vs {:.2}%", physics.test_svm_mrpe, data_only.test_svm_mrpe));
    }
    let detail = format!(
        "physics vs data-only test svm MRPE: {} (zero predictor {:.2}%); physics <= data-only in {wins}/3; \
         monotone after epoch 5 in {monotone}/6 runs; slowest run {:.1} min",
        lines.join(", "),
        zero.mrpe[3],
        slowest / 60.0
    );
    ensure!(slowest < 30.0 * 60.0, "{detail}");
    ensure!(monotone == 6, "{detail}");
    ensure!(wins >= 2, "{detail}");
    Ok(detail)
}

// 8 ------------------------------------------------------------------------

fn metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    ensure!(close(mrpe(&[9.0; 7], &[10.0; 7]).map_err(fail)?, 10.0), "10% example");
    ensure!(close(mrpe(&[10.0; 7], &[10.0; 7]).map_err(fail)?, 0.0), "identical fields");
    ensure!(close(mrpe(&[0.0, 0.0, 0.0, 0.0], &[3.0, -8.0, 1.0, 0.5]).map_err(fail)?, 100.0 * 3.125 / 8.0), "zero predictor");
    ensure!(mrpe(&[0.0; 3], &[0.0; 3]).is_err(), "zero denominator accepted");
    ensure!(close(mae(&[1.0, 2.0, 3.0, 0.0], &[1.0, 2.0, 3.0, 4.0]).map_err(fail)?, 1.0), "2x2 MAE case");
    ensure!(close(mae(&[0.5; 6], &[0.0; 6]).map_err(fail)?, 0.5), "constant offset MAE");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pred: Vec<f64> = (0..200).map(|_| rng.random_range(-1e6..1e6)).collect();
    let truth: Vec<f64> = (0..200).map(|_| rng.random_range(-1e6..1e6)).collect();
    let base = mrpe(&pred, &truth).map_err(fail)?;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let c = 10f64.powf(rng.random_range(-6.0..6.0));
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let r = mrpe(&scale(&pred), &scale(&truth)).map_err(fail)?;
        worst = worst.max((r - base).abs() / base);
    }
    ensure!(worst <= 1e-12, "scaling changed MRPE by {worst:.2e} relative");
    Ok(format!("hand cases exact, 100 scalings within {worst:.1e} relative"))
}

// 9 ------------------------------------------------------------------------

fn determinism(data: &Path, dir: &Path) -> Outcome {
    let again = dir.join("again.spnd");
    generate(&again, Scale::Desk, DATA_SEED, SplitPreset::Load, Exec::default()).map_err(fail)?;
    let read = |p: &Path| std::fs::read(p).map_err(fail);
    ensure!(read(data)? == read(&again)?, "container bytes differ");
    ensure!(
        read(&Manifest::path_for(data))? == read(&Manifest::path_for(&again))?,
        "manifest bytes differ"
    );

    let (manifest, samples) = load_dataset(data).map_err(fail)?;
    let grid = Some(12);
    let train = prepare_samples(&samples, &manifest.split.train[..10], &manifest, grid, Exec::default()).map_err(fail)?;
    let val = prepare_samples(&samples, &manifest.split.val[..4], &manifest, grid, Exec::default()).map_err(fail)?;
    let mut config = TrainConfig::new(4, 9);
    config.batch_size = 4;
    let trainer = Trainer {
        config,
        weights: WeightMode::Auto,
        train: &train,
        val: &val,
        norm: manifest.normalization,
        init_seed: 9,
        data_seed: manifest.master_seed,
        exec: Exec::default(),
    };
    let fresh = || Model::new(ModelConfig::new(Variant::SpatiotempoLstm, DESK_WIDTH), 9).map_err(fail);

    let mut whole = fresh()?;
    let whole_out = TrainOutputs::new(dir.join("whole.ckpt"));
    let full = trainer.run(&mut whole, &whole_out, None).map_err(fail)?;

    let part_out = TrainOutputs::new(dir.join("part.ckpt"));
    trainer.run_until(&mut fresh()?, &part_out, None, 2).map_err(fail)?;
    let state = Checkpoint::load(part_out.last_path()).map_err(fail)?;
    let mut resumed = fresh()?;
    let tail = trainer.run(&mut resumed, &part_out, Some(&state)).map_err(fail)?;

    let mut worst = 0.0_f64;
    for (a, b) in full.history[3..].iter().zip(&tail.history) {
        worst = worst.max((a.train_total - b.train_total).abs()).max((a.val_total - b.val_total).abs());
    }
    ensure!(tail.history.len() == 2, "resumed run trained {} epochs", tail.history.len());
    ensure!(worst <= 1e-6, "resumed losses differ by {worst:.2e}");
    let param_gap = whole.params.iter().zip(&resumed.params).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    ensure!(param_gap <= 1e-6, "resumed parameters differ by {param_gap:.2e}");
    Ok(format!(
        "regenerated container and manifest byte-identical, resume loss gap {worst:.1e}, parameter gap {param_gap:.1e}"
    ))
}
