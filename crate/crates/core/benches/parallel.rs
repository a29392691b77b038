//! Sequential vs rayon execution of the data-parallel kernels.
//!
//! Run with `cargo bench -p stressfield`; build with `--no-default-features`
//! to time the sequential fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stressfield::dataset::{generate_samples, BcCase, GenerationConfig, SampleKey, DESK_EDGE_LENGTH};
use stressfield::exec::Exec;
use stressfield::geometry::{sample_polygon, PerturbationConfig};
use stressfield::grid::grid_operator_for_mesh;
use stressfield::mesh::{triangulate, Mesh};
use stressfield::model::{Model, ModelConfig, Variant};

fn strategies() -> Vec<(&'static str, Exec)> {
    #[allow(unused_mut)]
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn sample_generation(c: &mut Criterion) {
    let mut cfg = GenerationConfig::new(3);
    cfg.edge_length = DESK_EDGE_LENGTH;
    let keys: Vec<SampleKey> = (0..4)
        .map(|k| SampleKey { geometry_id: 1 + k, bc_case: BcCase::E2, load_case: 1 + k })
        .collect();
    let mut group = c.benchmark_group("generate_4_samples");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_samples(&keys, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn grid_operators(c: &mut Criterion) {
    let meshes: Vec<Mesh> = (1..=8)
        .map(|i| triangulate(&sample_polygon(i, 3, &PerturbationConfig::default()).unwrap(), DESK_EDGE_LENGTH).unwrap())
        .collect();
    let mut group = c.benchmark_group("grid_operator_8_meshes_g64");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&meshes, |m| grid_operator_for_mesh(m, 64).unwrap()))
        });
    }
    group.finish();
}

fn batch_forward(c: &mut Criterion) {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 16), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array4::from_shape_fn((8, 160, 100, 5), |_| rng.random_range(-1.0..1.0));
    let mut group = c.benchmark_group("stm_forward_batch8_d16");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.forward_with(x.view(), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sample_generation, grid_operators, batch_forward);
criterion_main!(benches);
