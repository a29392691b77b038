use super::*;
use ndarray::{s, Array4};
use proptest::prelude::*;
use rand::Rng;

fn random4(shape: (usize, usize, usize, usize), seed: u64, scale: f64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

fn random3(shape: (usize, usize, usize), seed: u64, scale: f64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Scalars in a dense layer and in a gate-four LSTM with two bias vectors.
fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn lstm(i: usize, h: usize) -> usize {
    4 * (h * i + h * h + 2 * h)
}

#[test]
fn parameter_counts() {
    let d = 64;
    let expected = dense(5, 2 * d) + dense(2 * d, d) + 6 * lstm(d, d) + dense(d, 3);
    let stm = param_count(&ModelConfig::new(Variant::SpatiotempoLstm, d));
    assert_eq!(stm, expected);
    assert_eq!(stm, 208_899);
    assert!((200_000..=216_000).contains(&stm));
    assert_eq!(param_count(&ModelConfig::new(Variant::TempoLstm, d)), stm);

    let mlp = param_count(&ModelConfig::new(Variant::SpatioMlp, d));
    let w = MLP_WIDTH;
    assert_eq!(mlp, dense(512 * 5, w) + 4 * dense(w, w) + dense(w, 512 * 3));
    assert!((mlp as f64 - 828_000.0).abs() / 828_000.0 < 0.01, "{mlp}");

    for v in Variant::ALL {
        let m = Model::new(ModelConfig::new(v, 4), 0).unwrap();
        assert_eq!(m.param_count(), param_count(&m.config));
    }
}

#[test]
fn full_size_encoder_and_head_shapes() {
    let model = Model::new(ModelConfig::default(), 3).unwrap();
    let x = random4((2, 150, 100, 5), 1, 1.0);
    assert_eq!(model.encode(x.view()).unwrap().dim(), (2, 150, 100, 64));
    let f = random4((1, 150, 100, 64), 2, 1.0);
    assert_eq!(model.decode(f.view()).unwrap().dim(), (1, 150, 100, 3));
    assert!(matches!(model.encode(f.view()), Err(Error::Shape(_))));
}

#[test]
fn encoder_is_pointwise() {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 8), 5).unwrap();
    let mut x = random4((3, 6, 4, 5), 7, 2.0);
    // Node 4 of batch 0 repeats node 1.
    let row = x.slice(s![0, 1, .., ..]).to_owned();
    x.slice_mut(s![0, 4, .., ..]).assign(&row);
    let e = model.encode(x.view()).unwrap();
    assert_eq!(e.slice(s![0, 1, .., ..]), e.slice(s![0, 4, .., ..]));

    let perm = [2, 0, 1];
    let xp = Array4::from_shape_fn(x.dim(), |(b, n, t, c)| x[(perm[b], n, t, c)]);
    let ep = model.encode(xp.view()).unwrap();
    for b in 0..3 {
        assert_eq!(ep.index_axis(Axis(0), b), e.index_axis(Axis(0), perm[b]));
    }
}

#[test]
fn head_is_linear_with_zero_bias() {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 6), 11).unwrap();
    let bias = model.head_bias_range().unwrap();
    assert!(model.params[bias].iter().all(|&b| b == 0.0));
    assert!(model.decode(Array4::zeros((1, 3, 2, 6)).view()).unwrap().iter().all(|&v| v == 0.0));
    let a = random4((2, 3, 4, 6), 1, 1.0);
    let b = random4((2, 3, 4, 6), 2, 1.0);
    let mix = &a * 2.5 - &b * 0.5;
    let lhs = model.decode(mix.view()).unwrap();
    let rhs = model.decode(a.view()).unwrap() * 2.5 - model.decode(b.view()).unwrap() * 0.5;
    assert!(lhs.iter().zip(&rhs).all(|(l, r)| (l - r).abs() < 1e-12));
}

#[test]
fn degenerate_sequence_lengths() {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 5), 2).unwrap();
    for (n, t) in [(4, 1), (1, 4), (1, 1)] {
        let f = random4((2, n, t, 5), 3, 1.0);
        assert_eq!(model.stm_forward(0, f.view()).unwrap().dim(), (2, n, t, 5));
        let x = random4((2, n, t, 5), 4, 1.0);
        assert_eq!(model.forward(x.view()).unwrap().dim(), (2, n, t, 3));
    }
    assert!(model.stm_forward(3, random4((1, 2, 2, 5), 1, 1.0).view()).is_err());
}

#[test]
fn temporal_stage_is_causal() {
    for v in [Variant::SpatiotempoLstm, Variant::TempoLstm] {
        let model = Model::new(ModelConfig::new(v, 6), 13).unwrap();
        let f = random4((1, 4, 8, 6), 5, 1.0);
        let base = model.temporal_stage(1, f.view()).unwrap();
        let t = 3;
        let mut g = f.clone();
        g.slice_mut(s![.., .., t + 1, ..]).mapv_inplace(|v| v + 0.7);
        let pert = model.temporal_stage(1, g.view()).unwrap();
        assert_eq!(base.slice(s![.., .., ..=t, ..]), pert.slice(s![.., .., ..=t, ..]));
        assert_ne!(base.slice(s![.., .., t + 1, ..]), pert.slice(s![.., .., t + 1, ..]));
    }
}

#[test]
fn tempo_lstm_keeps_nodes_independent() {
    let model = Model::new(ModelConfig::new(Variant::TempoLstm, 6), 17).unwrap();
    let x = random4((1, 5, 7, 5), 6, 1.0);
    let base = model.forward(x.view()).unwrap();
    let mut y = x.clone();
    y.slice_mut(s![0, 2, .., ..]).mapv_inplace(|v| v * -1.5 + 0.3);
    let pert = model.forward(y.view()).unwrap();
    for n in 0..5 {
        let same = base.slice(s![0, n, .., ..]) == pert.slice(s![0, n, .., ..]);
        assert_eq!(same, n != 2, "node {n}");
    }
}

#[test]
fn stm_mixes_nodes_along_the_node_sequence() {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 6), 17).unwrap();
    let x = random4((1, 5, 7, 5), 6, 1.0);
    let base = model.forward(x.view()).unwrap();
    let mut y = x.clone();
    y.slice_mut(s![0, 2, .., ..]).mapv_inplace(|v| v + 0.5);
    let pert = model.forward(y.view()).unwrap();
    // Node sequences run in index order, so node 0 still sees nothing of node
    // 2 after one block; later blocks only propagate forward as well.
    assert_eq!(base.slice(s![0, ..2, .., ..]), pert.slice(s![0, ..2, .., ..]));
    assert_ne!(base.slice(s![0, 3, .., ..]), pert.slice(s![0, 3, .., ..]));
}

#[test]
fn spatio_mlp_keeps_frames_independent() {
    let mut cfg = ModelConfig::new(Variant::SpatioMlp, 1);
    cfg.mlp_width = 12;
    cfg.mlp_max_nodes = 10;
    let model = Model::new(cfg, 19).unwrap();
    let x = random4((2, 6, 5, 5), 8, 1.0);
    let base = model.forward(x.view()).unwrap();
    let mut y = x.clone();
    y.slice_mut(s![.., .., 3, ..]).mapv_inplace(|v| v + 1.0);
    let pert = model.forward(y.view()).unwrap();
    for t in 0..5 {
        let same = base.slice(s![.., .., t, ..]) == pert.slice(s![.., .., t, ..]);
        assert_eq!(same, t != 3, "frame {t}");
    }
    assert!(matches!(model.forward(random4((1, 11, 2, 5), 1, 1.0).view()), Err(Error::Shape(_))));
    assert!(model.encode(x.view()).is_err());
}

#[test]
fn batch_forward_matches_per_sample_and_sequential() {
    let model = Model::new(ModelConfig::new(Variant::SpatiotempoLstm, 4), 23).unwrap();
    let x = random4((3, 4, 5, 5), 9, 1.0);
    let par = model.forward(x.view()).unwrap();
    let seq = model.forward_with(x.view(), Exec::Sequential).unwrap();
    assert_eq!(par, seq);
    for b in 0..3 {
        assert_eq!(par.index_axis(Axis(0), b), model.forward_sample(x.index_axis(Axis(0), b)).unwrap());
    }
}

/// Central-difference check of `∂/∂θ Σ c·y + ½ Σ y²` for random `c`.
fn gradient_check(config: ModelConfig, n: usize, t: usize) {
    let model = Model::new(config, 31).unwrap();
    let x = random3((n, t, 5), 10, 1.0);
    let c = random3((n, t, 3), 11, 1.0);
    let loss = |m: &Model| {
        let y = m.forward_sample(x.view()).unwrap();
        (&y * &c).sum() + 0.5 * y.mapv(|v| v * v).sum()
    };
    let (y, tape) = model.forward_tape(x.view()).unwrap();
    let dy = &c + &y;
    let mut grads = vec![0.0; model.param_count()];
    model.backward(&tape, dy.view(), &mut grads).unwrap();

    let eps = 1e-6;
    let mut probe = model.clone();
    let stride = (model.param_count() / 400).max(1);
    let mut checked = 0;
    for k in (0..model.param_count()).step_by(stride) {
        let orig = probe.params[k];
        probe.params[k] = orig + eps;
        let up = loss(&probe);
        probe.params[k] = orig - eps;
        let down = loss(&probe);
        probe.params[k] = orig;
        let fd = (up - down) / (2.0 * eps);
        let a = grads[k];
        assert!(
            (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-8,
            "{:?} param {k}: analytic {a} vs numeric {fd}",
            config.variant
        );
        checked += 1;
    }
    assert!(checked > 100 || checked == model.param_count());
}

#[test]
fn gradients_match_finite_differences() {
    gradient_check(ModelConfig::new(Variant::SpatiotempoLstm, 4), 5, 6);
    gradient_check(ModelConfig::new(Variant::TempoLstm, 4), 5, 6);
    let mut mlp = ModelConfig::new(Variant::SpatioMlp, 4);
    mlp.mlp_width = 7;
    mlp.mlp_max_nodes = 6;
    gradient_check(mlp, 5, 6);
}

#[test]
fn input_tensor_layout() {
    let nodes = [[0.1, 0.2], [0.3, 0.4]];
    let forces = ndarray::Array3::from_shape_fn((2, 2, 3), |(i, c, t)| (100 * i + 10 * c + t) as f32);
    let x = input_tensor(&nodes, &[true, false], forces.view(), 1e-4).unwrap();
    assert_eq!(x.dim(), (2, 3, 5));
    assert_eq!(x[(1, 2, 0)], 0.3);
    assert_eq!(x[(0, 1, 2)], 1.0);
    assert_eq!(x[(1, 1, 2)], 0.0);
    assert!((x[(1, 2, 4)] - 112.0 * 1e-4).abs() < 1e-15);
    assert!(input_tensor(&nodes[..1], &[true, false], forces.view(), 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_round_trip_and_outputs_stay_finite(
        b in 1usize..3, n in 1usize..6, t in 1usize..6, d in 1usize..6, v in 0usize..3, seed in 0u64..100
    ) {
        let mut cfg = ModelConfig::new(Variant::ALL[v], d);
        cfg.mlp_width = 8;
        cfg.mlp_max_nodes = 6;
        let model = Model::new(cfg, seed).unwrap();
        let x = random4((b, n, t, 5), seed + 1, 10.0);
        let y = model.forward(x.view()).unwrap();
        prop_assert_eq!(y.dim(), (b, n, t, 3));
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
