//! Regular-grid reconstruction of nodal fields and the equilibrium residual.
//!
//! A [`GridOperator`] maps N nodal values onto a G×G grid spanning the mesh
//! bounding box with row-normalized Gaussian weights (Nadaraya–Watson). Grid
//! arrays are row-major with the row index running along y:
//! cell `(i, j)` sits at `(x_min + j·hx, y_min + i·hy)` and has flat index
//! `i·G + j`.

mod raster;
mod sparse;

pub use raster::{read_raster, write_raster, RasterChannel};
pub use sparse::SparseRows;

use sparse::RowAccumulator;

use crate::exec::Exec;
use crate::geometry::Point;
use crate::mesh::Mesh;
use crate::{Error, Result};

/// Default grid resolution for rendering and the library API.
pub const DEFAULT_GRID_SIZE: usize = 200;
/// Default bandwidth as a multiple of the median nearest-neighbour spacing.
pub const BANDWIDTH_FACTOR: f64 = 1.5;
/// Kernel support radius in bandwidths; weights beyond it are dropped.
pub const KERNEL_CUTOFF: f64 = 6.0;
/// A cell is inside the support when its nearest node is this many bandwidths away or closer.
pub const MASK_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridOperator {
    pub size: usize,
    pub origin: Point,
    pub hx: f64,
    pub hy: f64,
    pub bandwidth: f64,
    /// `true` = inside mesh support, G² entries.
    pub mask: Vec<bool>,
    /// G² × N kernel weights; masked rows are empty.
    pub weights: SparseRows,
}

/// 1.5 × the median nearest-neighbour distance between nodes.
pub fn default_bandwidth(nodes: &[Point]) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::config("bandwidth needs at least two nodes"));
    }
    let mut nearest: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| dist2(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nearest.sort_by(f64::total_cmp);
    let m = nearest.len();
    let median = if m % 2 == 1 {
        nearest[m / 2]
    } else {
        0.5 * (nearest[m / 2 - 1] + nearest[m / 2])
    };
    if !(median > 0.0) {
        return Err(Error::config("coincident nodes give a zero bandwidth"));
    }
    Ok(BANDWIDTH_FACTOR * median)
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn build_grid_operator(nodes: &[Point], bandwidth: f64, size: usize) -> Result<GridOperator> {
    build_grid_operator_with(nodes, bandwidth, size, Exec::default())
}

pub fn build_grid_operator_with(
    nodes: &[Point],
    bandwidth: f64,
    size: usize,
    exec: Exec,
) -> Result<GridOperator> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if size < 2 {
        return Err(Error::config(format!("grid size must be at least 2, got {size}")));
    }
    if nodes.is_empty() {
        return Err(Error::config("no nodes to reconstruct from"));
    }
    let (lo, hi) = nodes.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    );
    let hx = (hi[0] - lo[0]) / (size - 1) as f64;
    let hy = (hi[1] - lo[1]) / (size - 1) as f64;
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::config("nodes span a degenerate bounding box"));
    }
    let inv2s2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let cut2 = (KERNEL_CUTOFF * bandwidth).powi(2);
    let mask2 = (MASK_RADIUS * bandwidth).powi(2);

    // One row of cells at a time keeps the parallel grain coarse.
    let rows: Vec<Vec<Option<Vec<(usize, f64)>>>> = exec.map_range(size, |i| {
        let y = lo[1] + i as f64 * hy;
        (0..size)
            .map(|j| {
                let p = [lo[0] + j as f64 * hx, y];
                let mut nearest = f64::INFINITY;
                let mut entries = Vec::new();
                let mut total = 0.0;
                for (n, q) in nodes.iter().enumerate() {
                    let d2 = dist2(&p, q);
                    nearest = nearest.min(d2);
                    if d2 <= cut2 {
                        let w = (-d2 * inv2s2).exp();
                        total += w;
                        entries.push((n, w));
                    }
                }
                (nearest <= mask2).then(|| {
                    for e in &mut entries {
                        e.1 /= total;
                    }
                    entries
                })
            })
            .collect()
    });

    let mut weights = SparseRows::new(nodes.len());
    let mut mask = Vec::with_capacity(size * size);
    for cell in rows.into_iter().flatten() {
        mask.push(cell.is_some());
        weights.push_row(cell.unwrap_or_default());
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::config(format!(
            "bandwidth {bandwidth} m masks every cell of a {size}×{size} grid"
        )));
    }
    Ok(GridOperator {
        size,
        origin: lo,
        hx,
        hy,
        bandwidth,
        mask,
        weights,
    })
}

/// Operator for a mesh at the default bandwidth.
pub fn grid_operator_for_mesh(mesh: &Mesh, size: usize) -> Result<GridOperator> {
    build_grid_operator(&mesh.nodes, default_bandwidth(&mesh.nodes)?, size)
}

impl GridOperator {
    pub fn num_cells(&self) -> usize {
        self.size * self.size
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.size + j
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        [self.origin[0] + j as f64 * self.hx, self.origin[1] + i as f64 * self.hy]
    }

    pub fn masked_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| !m).count() as f64 / self.num_cells() as f64
    }

    /// Unmasked cells whose four axis neighbours are unmasked too, so both
    /// derivatives there are central differences.
    pub fn interior_mask(&self) -> Vec<bool> {
        let g = self.size;
        let mut out = vec![false; g * g];
        for i in 1..g.saturating_sub(1) {
            for j in 1..g - 1 {
                let k = self.index(i, j);
                out[k] = self.mask[k]
                    && self.mask[k - 1]
                    && self.mask[k + 1]
                    && self.mask[k - g]
                    && self.mask[k + g];
            }
        }
        out
    }

    /// Nodal values → grid values (zero on masked cells).
    pub fn lift(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        self.check_nodal(nodal)?;
        Ok(self.weights.mul(nodal))
    }

    /// `nodal_grad += Wᵀ grid_grad`
    pub fn lift_transpose_add(&self, grid_grad: &[f64], nodal_grad: &mut [f64]) {
        self.weights.mul_transpose_add(grid_grad, nodal_grad);
    }

    fn check_nodal(&self, nodal: &[f64]) -> Result<()> {
        if nodal.len() != self.num_nodes() {
            return Err(Error::shape(format!(
                "nodal field has {} values, operator expects {}",
                nodal.len(),
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// Finite-difference weights for the derivative along `axis` (0 = x,
    /// 1 = y) at a cell: central where both neighbours are unmasked,
    /// one-sided where only one is, none otherwise.
    fn stencil(&self, i: usize, j: usize, axis: usize) -> Stencil {
        let k = self.index(i, j);
        if !self.mask[k] {
            return Stencil::default();
        }
        let (pos, len, h, step) = match axis {
            0 => (j, self.size, self.hx, 1),
            _ => (i, self.size, self.hy, self.size),
        };
        let prev = (pos > 0 && self.mask[k - step]).then(|| k - step);
        let next = (pos + 1 < len && self.mask[k + step]).then(|| k + step);
        match (prev, next) {
            (Some(p), Some(n)) => Stencil::two(n, 0.5 / h, p, -0.5 / h),
            (None, Some(n)) => Stencil::two(n, 1.0 / h, k, -1.0 / h),
            (Some(p), None) => Stencil::two(k, 1.0 / h, p, -1.0 / h),
            (None, None) => Stencil::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stencil {
    terms: [(usize, f64); 2],
    len: usize,
}

impl Stencil {
    fn two(a: usize, wa: f64, b: usize, wb: f64) -> Self {
        Self {
            terms: [(a, wa), (b, wb)],
            len: 2,
        }
    }

    fn terms(&self) -> &[(usize, f64)] {
        &self.terms[..self.len]
    }
}

/// Masked finite-difference gradient of a G×G field.
pub fn grid_gradient(field: &[f64], op: &GridOperator) -> Result<(Vec<f64>, Vec<f64>)> {
    if field.len() != op.num_cells() {
        return Err(Error::shape(format!(
            "grid field has {} cells, expected {}",
            field.len(),
            op.num_cells()
        )));
    }
    let mut gx = vec![0.0; field.len()];
    let mut gy = vec![0.0; field.len()];
    for i in 0..op.size {
        for j in 0..op.size {
            let k = op.index(i, j);
            let apply = |s: Stencil| s.terms().iter().map(|&(c, w)| w * field[c]).sum::<f64>();
            gx[k] = apply(op.stencil(i, j, 0));
            gy[k] = apply(op.stencil(i, j, 1));
        }
    }
    Ok((gx, gy))
}

/// Adjoint of [`grid_gradient`]: accumulates `Dxᵀ gx_bar + Dyᵀ gy_bar`.
pub fn grid_gradient_transpose_add(gx_bar: &[f64], gy_bar: &[f64], op: &GridOperator, out: &mut [f64]) {
    for i in 0..op.size {
        for j in 0..op.size {
            let k = op.index(i, j);
            for (axis, bar) in [(0, gx_bar[k]), (1, gy_bar[k])] {
                if bar != 0.0 {
                    for &(c, w) in op.stencil(i, j, axis).terms() {
                        out[c] += w * bar;
                    }
                }
            }
        }
    }
}

/// Equilibrium residual on the grid, Pa/m; zero on masked cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub size: usize,
    pub rx: Vec<f64>,
    pub ry: Vec<f64>,
}

impl ResidualField {
    /// Mean of `sqrt(rx² + ry²)` over the cells selected by `cells`.
    pub fn mean_magnitude(&self, cells: &[bool]) -> f64 {
        let (sum, n) = self
            .rx
            .iter()
            .zip(&self.ry)
            .zip(cells)
            .filter(|(_, &c)| c)
            .fold((0.0, 0usize), |(s, n), ((x, y), _)| (s + x.hypot(*y), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Nodal fields entering one residual evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ResidualInputs<'a> {
    /// Pa
    pub sxx: &'a [f64],
    pub syy: &'a [f64],
    pub sxy: &'a [f64],
    /// Body-force density, N/m³.
    pub body: &'a [[f64; 2]],
    /// m/s²
    pub accel: &'a [[f64; 2]],
    /// kg/m³
    pub density: f64,
}

/// `r_x = ∂σxx/∂x + ∂σxy/∂y + b_x − ρ·a_x`, `r_y = ∂σyy/∂y + ∂σxy/∂x + b_y − ρ·a_y`,
/// with every nodal field lifted through the operator before differencing.
pub fn pde_residual(inputs: &ResidualInputs, op: &GridOperator) -> Result<ResidualField> {
    let n = op.num_nodes();
    if inputs.body.len() != n || inputs.accel.len() != n {
        return Err(Error::shape(format!(
            "body/acceleration have {}/{} nodes, operator expects {n}",
            inputs.body.len(),
            inputs.accel.len()
        )));
    }
    let (dxx, _) = grid_gradient(&op.lift(inputs.sxx)?, op)?;
    let (_, dyy) = grid_gradient(&op.lift(inputs.syy)?, op)?;
    let (dxy_x, dxy_y) = grid_gradient(&op.lift(inputs.sxy)?, op)?;
    let src = |c: usize| -> Vec<f64> {
        (0..n).map(|k| inputs.body[k][c] - inputs.density * inputs.accel[k][c]).collect()
    };
    let (sx, sy) = (op.lift(&src(0))?, op.lift(&src(1))?);
    let rx = (0..op.num_cells()).map(|k| dxx[k] + dxy_y[k] + sx[k]).collect();
    let ry = (0..op.num_cells()).map(|k| dyy[k] + dxy_x[k] + sy[k]).collect();
    Ok(ResidualField {
        size: op.size,
        rx,
        ry,
    })
}

/// Adjoint of the stress part of [`pde_residual`]: nodal gradients
/// `(∂L/∂σxx, ∂L/∂σyy, ∂L/∂σxy)` given grid gradients `∂L/∂r_x`, `∂L/∂r_y`.
pub fn pde_residual_backward(rx_bar: &[f64], ry_bar: &[f64], op: &GridOperator) -> [Vec<f64>; 3] {
    let cells = op.num_cells();
    let zero = vec![0.0; cells];
    let mut gxx = vec![0.0; cells];
    let mut gyy = vec![0.0; cells];
    let mut gxy = vec![0.0; cells];
    grid_gradient_transpose_add(rx_bar, &zero, op, &mut gxx);
    grid_gradient_transpose_add(&zero, ry_bar, op, &mut gyy);
    grid_gradient_transpose_add(ry_bar, rx_bar, op, &mut gxy);
    let n = op.num_nodes();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (o, g) in out.iter_mut().zip([&gxx, &gyy, &gxy]) {
        op.lift_transpose_add(g, o);
    }
    out
}

/// Explicitly assembled composites `Dx·W` and `Dy·W` (G² × N).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualJacobian {
    pub dx_w: SparseRows,
    pub dy_w: SparseRows,
}

impl ResidualJacobian {
    pub fn assemble(op: &GridOperator) -> Self {
        let n = op.num_nodes();
        let mut acc = RowAccumulator::new(n);
        let mut dx_w = SparseRows::new(n);
        let mut dy_w = SparseRows::new(n);
        for i in 0..op.size {
            for j in 0..op.size {
                dx_w.push_row(op.weights.combine_rows(op.stencil(i, j, 0).terms(), &mut acc));
                dy_w.push_row(op.weights.combine_rows(op.stencil(i, j, 1).terms(), &mut acc));
            }
        }
        Self { dx_w, dy_w }
    }

    /// Stress-dependent part of the residual: `(DxW σxx + DyW σxy, DyW σyy + DxW σxy)`.
    pub fn apply(&self, sxx: &[f64], syy: &[f64], sxy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let add = |a: Vec<f64>, b: Vec<f64>| a.into_iter().zip(b).map(|(a, b)| a + b).collect();
        (
            add(self.dx_w.mul(sxx), self.dy_w.mul(sxy)),
            add(self.dy_w.mul(syy), self.dx_w.mul(sxy)),
        )
    }
}

/// Applied nodal forces (N) → body-force density (N/m³) via tributary area.
pub fn body_force_density(mesh: &Mesh, forces: &[[f64; 2]], thickness: f64) -> Result<Vec<[f64; 2]>> {
    if forces.len() != mesh.num_nodes() {
        return Err(Error::shape(format!(
            "{} nodal forces for {} nodes",
            forces.len(),
            mesh.num_nodes()
        )));
    }
    let areas = mesh.tributary_areas();
    Ok(forces
        .iter()
        .zip(&areas)
        .map(|(f, &a)| {
            let v = a * thickness;
            if v > 0.0 {
                [f[0] / v, f[1] / v]
            } else {
                [0.0, 0.0]
            }
        })
        .collect())
}
