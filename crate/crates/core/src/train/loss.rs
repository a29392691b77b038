//! Loss terms on one sample. Predictions and targets are normalized stresses
//! `(N, T, 3)`; each function also returns `∂L/∂pred`.

use ndarray::{Array2, Array3, ArrayView3, Axis};

use crate::dataset::{DatasetSample, NormalizationSpec};
use ndarray::linalg::general_mat_mul;

use crate::grid::{
    body_force_density, build_grid_operator, default_bandwidth, GridOperator, ResidualJacobian, SparseRows,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
}

impl LossWeights {
    pub const DATA_ONLY: LossWeights = LossWeights { data: 1.0, pde: 0.0, bc: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let w = [self.data, self.pde, self.bc];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }

    /// Parse `w_data,w_pde,w_bc`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("weights must be three numbers, got `{s}`")))?;
        let [data, pde, bc] = v[..] else {
            return Err(Error::config(format!("weights must be three numbers, got `{s}`")));
        };
        let w = Self { data, pde, bc };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.data * self.data + w.pde * self.pde + w.bc * self.bc
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { data: k * self.data, pde: k * self.pde, bc: k * self.bc }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { data: self.data + o.data, pde: self.pde + o.pde, bc: self.bc + o.bc }
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite() && self.pde.is_finite() && self.bc.is_finite()
    }
}

/// Weighted sum; errors if every weight is zero.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(parts.total(w))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(pred: &ArrayView3<f64>, truth: &ArrayView3<f64>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.dim(), truth.dim())));
    }
    Ok(())
}

/// Mean absolute error over every node, frame and channel.
pub fn loss_data(pred: ArrayView3<f64>, truth: ArrayView3<f64>) -> Result<(f64, Array3<f64>)> {
    same_shape(&pred, &truth)?;
    let n = pred.len() as f64;
    let mut grad = Array3::zeros(pred.dim());
    let mut sum = 0.0;
    ndarray::Zip::from(&mut grad).and(&pred).and(&truth).for_each(|g, &p, &t| {
        sum += (p - t).abs();
        *g = sign(p - t) / n;
    });
    Ok((sum / n, grad))
}

/// Initial-condition term (frame 0 against the normalized image of zero
/// stress) plus the constrained-node term (prediction against the target at
/// every frame of every constrained node).
pub fn loss_bc(
    pred: ArrayView3<f64>,
    truth: ArrayView3<f64>,
    bc_flags: &[bool],
    norm: &NormalizationSpec,
) -> Result<(f64, Array3<f64>)> {
    same_shape(&pred, &truth)?;
    let (n, t, c) = pred.dim();
    if bc_flags.len() != n {
        return Err(Error::shape("constraint flags disagree with node count"));
    }
    let mut grad = Array3::zeros(pred.dim());
    let k0 = 1.0 / (n * c) as f64;
    let mut initial = 0.0;
    for i in 0..n {
        for ch in 0..c {
            let r = pred[(i, 0, ch)] - norm.apply(ch, 0.0);
            initial += r.abs();
            grad[(i, 0, ch)] += sign(r) * k0;
        }
    }
    let fixed: Vec<usize> = (0..n).filter(|&i| bc_flags[i]).collect();
    let mut pinned = 0.0;
    if !fixed.is_empty() {
        let k1 = 1.0 / (fixed.len() * t * c) as f64;
        for &i in &fixed {
            for f in 0..t {
                for ch in 0..c {
                    let r = pred[(i, f, ch)] - truth[(i, f, ch)];
                    pinned += r.abs();
                    grad[(i, f, ch)] += sign(r) * k1;
                }
            }
        }
        pinned *= k1;
    }
    Ok((initial * k0 + pinned, grad))
}

/// Per-sample data for the equilibrium term, restricted to unmasked cells:
/// the composite derivative-of-lift operators and the lifted source
/// `W(b − ρa)` for every frame. All frames are then handled by dense products.
#[derive(Debug, Clone)]
pub struct PdeContext {
    pub op: GridOperator,
    /// `(U, N)` rows of `Dx W` and `Dy W` for the unmasked cells.
    dx: Array2<f64>,
    dy: Array2<f64>,
    /// `(U, T)` per component, Pa/m.
    source_x: Array2<f64>,
    source_y: Array2<f64>,
    /// `1 / (ρ·g_char)`
    scale: f64,
}

fn dense_rows(rows: &SparseRows, keep: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((keep.len(), rows.ncols()));
    for (r, &i) in keep.iter().enumerate() {
        let (cols, vals) = rows.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[(r, c as usize)] += v;
        }
    }
    out
}

impl PdeContext {
    pub fn new(sample: &DatasetSample, density: f64, thickness: f64, g_char: f64, grid_size: usize) -> Result<Self> {
        let op = build_grid_operator(&sample.nodes, default_bandwidth(&sample.nodes)?, grid_size)?;
        let keep: Vec<usize> = (0..op.num_cells()).filter(|&c| op.mask[c]).collect();
        let jac = ResidualJacobian::assemble(&op);
        let mesh = sample.mesh();
        let n = sample.num_nodes();
        let frames = sample.num_frames();
        // Nodal sources `(N, T)`, lifted for all frames at once.
        let mut nodal_x = Array2::zeros((n, frames));
        let mut nodal_y = Array2::zeros((n, frames));
        for f in 0..frames {
            let forces: Vec<[f64; 2]> = (0..n)
                .map(|i| [f64::from(sample.forces[(i, 0, f)]), f64::from(sample.forces[(i, 1, f)])])
                .collect();
            let body = body_force_density(&mesh, &forces, thickness)?;
            for i in 0..n {
                nodal_x[(i, f)] = body[i][0] - density * f64::from(sample.acceleration[(i, 0, f)]);
                nodal_y[(i, f)] = body[i][1] - density * f64::from(sample.acceleration[(i, 1, f)]);
            }
        }
        let w = dense_rows(&op.weights, &keep);
        Ok(Self {
            dx: dense_rows(&jac.dx_w, &keep),
            dy: dense_rows(&jac.dy_w, &keep),
            source_x: w.dot(&nodal_x),
            source_y: w.dot(&nodal_y),
            scale: 1.0 / (density * g_char),
            op,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.source_x.ncols()
    }

    pub fn num_unmasked(&self) -> usize {
        self.source_x.nrows()
    }
}

/// Mean of `|r_x|` and `|r_y|` over unmasked cells and all frames, divided
/// by `ρ·g_char`; the prediction is denormalized to pascals first.
pub fn loss_pde(pred: ArrayView3<f64>, ctx: &PdeContext, norm: &NormalizationSpec) -> Result<(f64, Array3<f64>)> {
    let (v, g) = pde_term(pred, ctx, norm, true)?;
    Ok((v, g.expect("requested")))
}

/// Value of [`loss_pde`] without the backward pass.
pub fn loss_pde_value(pred: ArrayView3<f64>, ctx: &PdeContext, norm: &NormalizationSpec) -> Result<f64> {
    Ok(pde_term(pred, ctx, norm, false)?.0)
}

fn pde_term(
    pred: ArrayView3<f64>,
    ctx: &PdeContext,
    norm: &NormalizationSpec,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    let (n, frames, c) = pred.dim();
    if n != ctx.op.num_nodes() || frames != ctx.num_frames() || c != 3 {
        return Err(Error::shape("prediction does not match the residual context"));
    }
    // Denormalized channels as `(N, T)` matrices.
    let field = |ch: usize| pred.index_axis(Axis(2), ch).mapv(|v| norm.invert(ch, v));
    let (sxx, syy, sxy) = (field(0), field(1), field(2));
    let mut rx = ctx.source_x.clone();
    let mut ry = ctx.source_y.clone();
    general_mat_mul(1.0, &ctx.dx, &sxx, 1.0, &mut rx);
    general_mat_mul(1.0, &ctx.dy, &sxy, 1.0, &mut rx);
    general_mat_mul(1.0, &ctx.dy, &syy, 1.0, &mut ry);
    general_mat_mul(1.0, &ctx.dx, &sxy, 1.0, &mut ry);
    let k = ctx.scale / (2.0 * (frames * ctx.num_unmasked()) as f64);
    let total = rx.iter().chain(ry.iter()).map(|v| v.abs()).sum::<f64>() * k;
    if !want_grad {
        return Ok((total, None));
    }
    rx.mapv_inplace(|v| sign(v) * k);
    ry.mapv_inplace(|v| sign(v) * k);
    let g_xx = ctx.dx.t().dot(&rx);
    let g_yy = ctx.dy.t().dot(&ry);
    let mut g_xy = ctx.dy.t().dot(&rx);
    general_mat_mul(1.0, &ctx.dx.t(), &ry, 1.0, &mut g_xy);
    let mut grad = Array3::zeros(pred.dim());
    for (ch, g) in [g_xx, g_yy, g_xy].iter().enumerate() {
        let h = norm.half_range(ch);
        grad.index_axis_mut(Axis(2), ch).zip_mut_with(g, |o, &v| *o = v * h);
    }
    Ok((total, Some(grad)))
}

/// Loss parts and the weighted gradient `∂(Σ wᵢ Lᵢ)/∂pred` for one sample.
/// Terms with zero weight are skipped (reported as 0) unless `want_all`.
pub fn sample_loss(
    pred: ArrayView3<f64>,
    truth: ArrayView3<f64>,
    bc_flags: &[bool],
    pde: Option<&PdeContext>,
    norm: &NormalizationSpec,
    w: &LossWeights,
    want_all: bool,
) -> Result<(LossParts, Array3<f64>)> {
    let (data, gd) = loss_data(pred, truth)?;
    let mut grad = gd * w.data;
    let mut parts = LossParts { data, ..Default::default() };
    if w.bc > 0.0 || want_all {
        let (bc, gb) = loss_bc(pred, truth, bc_flags, norm)?;
        parts.bc = bc;
        grad.scaled_add(w.bc, &gb);
    }
    if w.pde > 0.0 || want_all {
        if let Some(ctx) = pde {
            if w.pde > 0.0 {
                let (p, gp) = loss_pde(pred, ctx, norm)?;
                parts.pde = p;
                grad.scaled_add(w.pde, &gp);
            } else {
                parts.pde = loss_pde_value(pred, ctx, norm)?;
            }
        } else if w.pde > 0.0 {
            return Err(Error::config("equilibrium weight set but no residual context was prepared"));
        }
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{simulate_sample, BcCase, GenerationConfig, SampleKey, G_CHAR};
    use crate::grid::{pde_residual, ResidualInputs};
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    #[test]
    fn data_loss_hand_cases() {
        let s = array![[1.0, 2.0], [3.0, 4.0]].into_shape_with_order((2, 2, 1)).unwrap();
        let p = array![[1.0, 2.0], [3.0, 0.0]].into_shape_with_order((2, 2, 1)).unwrap();
        assert_eq!(loss_data(p.view(), s.view()).unwrap().0, 1.0);
        assert_eq!(loss_data(s.view(), s.view()).unwrap().0, 0.0);
        let z = Array3::<f64>::zeros((3, 4, 3));
        let half = Array3::from_elem((3, 4, 3), 0.5);
        assert_eq!(loss_data(half.view(), z.view()).unwrap().0, 0.5);
        assert!(loss_data(half.view(), Array3::zeros((3, 4, 2)).view()).is_err());
    }

    #[test]
    fn bc_loss_cases() {
        let norm = NormalizationSpec { min: [-2.0, -1.0, -4.0], max: [2.0, 3.0, 4.0] };
        let mut truth = Array3::from_shape_fn((4, 5, 3), |(i, t, c)| (i + t + c) as f64 * 0.1);
        for i in 0..4 {
            for c in 0..3 {
                truth[(i, 0, c)] = norm.apply(c, 0.0);
            }
        }
        let flags = [true, false, false, true];
        assert_eq!(loss_bc(truth.view(), truth.view(), &flags, &norm).unwrap().0, 0.0);
        let eps = 0.125;
        let mut pred = truth.clone();
        pred.index_axis_mut(Axis(1), 0).mapv_inplace(|v| v + eps);
        // Frame-0 offset on unconstrained nodes only shows up in the initial term.
        let no_flags = [false; 4];
        assert!((loss_bc(pred.view(), truth.view(), &no_flags, &norm).unwrap().0 - eps).abs() < 1e-15);
        // With two constrained nodes the pinned term adds eps over 1 of 5 frames.
        let (v, _) = loss_bc(pred.view(), truth.view(), &flags, &norm).unwrap();
        assert!((v - (eps + eps / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn total_loss_arithmetic() {
        let parts = LossParts { data: 0.2, pde: 0.1, bc: 0.05 };
        let w = LossWeights { data: 1.0, pde: 0.5, bc: 2.0 };
        assert!((total_loss(&parts, &w).unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(total_loss(&parts, &LossWeights::DATA_ONLY).unwrap(), 0.2);
        assert!(total_loss(&parts, &LossWeights { data: 0.0, pde: 0.0, bc: 0.0 }).is_err());
        assert!(LossWeights::parse("1,0,0").is_ok());
        assert!(LossWeights::parse("1,0").is_err());
        assert!(LossWeights::parse("1,-1,0").is_err());
    }

    fn sample_and_norm() -> (DatasetSample, NormalizationSpec) {
        let mut cfg = GenerationConfig::new(5);
        cfg.edge_length = 0.06;
        let key = SampleKey { geometry_id: 3, bc_case: BcCase::E2, load_case: 4 };
        let s = DatasetSample::from_record(&simulate_sample(key, &cfg).unwrap());
        let norm = NormalizationSpec::fit([s.stress.view()]).unwrap();
        (s, norm)
    }

    fn normalized_truth(s: &DatasetSample, norm: &NormalizationSpec) -> Array3<f64> {
        let (n, _, t) = s.stress.dim();
        Array3::from_shape_fn((n, t, 3), |(i, f, c)| norm.apply(c, f64::from(s.stress[(i, c, f)])))
    }

    #[test]
    fn pde_loss_is_zero_without_load_or_stress() {
        let (mut s, norm) = sample_and_norm();
        s.forces.fill(0.0);
        s.acceleration.fill(0.0);
        let ctx = PdeContext::new(&s, 7850.0, 0.01, G_CHAR, 16).unwrap();
        let n = s.num_nodes();
        let zero = Array3::from_shape_fn((n, 100, 3), |(_, _, c)| norm.apply(c, 0.0));
        let (v, _) = loss_pde(zero.view(), &ctx, &norm).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn pde_loss_matches_per_frame_residual() {
        let (s, norm) = sample_and_norm();
        let ctx = PdeContext::new(&s, 7850.0, 0.01, G_CHAR, 14).unwrap();
        let truth = normalized_truth(&s, &norm);
        let pred = truth.mapv(|v| 0.8 * v + 0.05);
        let (got, _) = loss_pde(pred.view(), &ctx, &norm).unwrap();
        assert_eq!(got, loss_pde_value(pred.view(), &ctx, &norm).unwrap());

        // Oracle: the factored residual of each frame, averaged by hand.
        let op = &ctx.op;
        let mesh = s.mesh();
        let n = s.num_nodes();
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in 0..100 {
            let ch = |c: usize| -> Vec<f64> { (0..n).map(|i| norm.invert(c, pred[(i, f, c)])).collect() };
            let forces: Vec<[f64; 2]> =
                (0..n).map(|i| [f64::from(s.forces[(i, 0, f)]), f64::from(s.forces[(i, 1, f)])]).collect();
            let accel: Vec<[f64; 2]> =
                (0..n).map(|i| [f64::from(s.acceleration[(i, 0, f)]), f64::from(s.acceleration[(i, 1, f)])]).collect();
            let body = body_force_density(&mesh, &forces, 0.01).unwrap();
            let (a, b, c) = (ch(0), ch(1), ch(2));
            let inputs = ResidualInputs { sxx: &a, syy: &b, sxy: &c, body: &body, accel: &accel, density: 7850.0 };
            let r = pde_residual(&inputs, op).unwrap();
            for cell in 0..op.num_cells() {
                if op.mask[cell] {
                    sum += r.rx[cell].abs() + r.ry[cell].abs();
                    count += 2;
                }
            }
        }
        let expect = sum / count as f64 / (7850.0 * G_CHAR);
        assert!((got - expect).abs() <= 1e-9 * expect, "{got} vs {expect}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (s, norm) = sample_and_norm();
        let ctx = PdeContext::new(&s, 7850.0, 0.01, G_CHAR, 12).unwrap();
        let truth = normalized_truth(&s, &norm);
        // Offset predictions keep every residual and difference away from the
        // kinks of the absolute value.
        let pred = Array3::from_shape_fn(truth.dim(), |(i, f, c)| truth[(i, f, c)] + 0.01 + 1e-3 * ((i * 7 + f * 3 + c) % 5) as f64);
        let w = LossWeights { data: 1.0, pde: 0.3, bc: 0.7 };
        let (_, grad) = sample_loss(pred.view(), truth.view(), &s.bc_flags, Some(&ctx), &norm, &w, true).unwrap();
        let eps = 1e-7;
        for &(i, f, c) in &[(0, 10, 0), (5, 50, 1), (s.num_nodes() - 1, 99, 2), (3, 0, 2)] {
            let mut p = pred.clone();
            p[(i, f, c)] += eps;
            let up = sample_loss(p.view(), truth.view(), &s.bc_flags, Some(&ctx), &norm, &w, true).unwrap().0.total(&w);
            p[(i, f, c)] -= 2.0 * eps;
            let down = sample_loss(p.view(), truth.view(), &s.bc_flags, Some(&ctx), &norm, &w, true).unwrap().0.total(&w);
            let fd = (up - down) / (2.0 * eps);
            let a = grad[(i, f, c)];
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-9, "({i},{f},{c}): {a} vs {fd}");
        }
    }

    /// Ground truth should satisfy equilibrium better than predicting no
    /// stress at all. On desk meshes it does not: element-constant stresses
    /// averaged to nodes, unresolved high-frequency response and the missing
    /// support reactions leave a residual comparable to the zero field's.
    #[test]
    #[ignore = "not satisfied on desk-scale meshes; run with --ignored to measure"]
    fn ground_truth_residual_dominates_zero_prediction() {
        let mut cfg = GenerationConfig::new(5);
        cfg.edge_length = crate::dataset::DESK_EDGE_LENGTH;
        let mut worse = Vec::new();
        for (k, bc) in [BcCase::E2, BcCase::E3, BcCase::E1E5].into_iter().enumerate() {
            for load in [1, 5, 10, 13] {
                let key = SampleKey { geometry_id: 1 + k as u32, bc_case: bc, load_case: load };
                let s = DatasetSample::from_record(&simulate_sample(key, &cfg).unwrap());
                let norm = NormalizationSpec::fit([s.stress.view()]).unwrap();
                let ctx = PdeContext::new(&s, 7850.0, 0.01, G_CHAR, crate::train::TRAIN_PDE_GRID).unwrap();
                let truth = normalized_truth(&s, &norm);
                let zero = Array3::from_shape_fn(truth.dim(), |(_, _, c)| norm.apply(c, 0.0));
                let t = loss_pde_value(truth.view(), &ctx, &norm).unwrap();
                let z = loss_pde_value(zero.view(), &ctx, &norm).unwrap();
                if t > z {
                    worse.push(format!("{key:?}: truth {t:.4} > zero {z:.4}"));
                }
            }
        }
        assert!(worse.is_empty(), "{}", worse.join("\n"));
    }

    proptest! {
        #[test]
        fn total_loss_is_monotone_in_each_part(
            a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0,
            w in (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0),
            bump in 0.0f64..3.0, which in 0usize..3,
        ) {
            let w = LossWeights { data: w.0, pde: w.1, bc: w.2 };
            let base = LossParts { data: a, pde: b, bc: c };
            let mut up = base;
            match which {
                0 => up.data += bump,
                1 => up.pde += bump,
                _ => up.bc += bump,
            }
            prop_assert!(total_loss(&up, &w).unwrap() >= total_loss(&base, &w).unwrap());
        }
    }
}
