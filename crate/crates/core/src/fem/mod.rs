//! Linear-elastic plane-stress finite elements on constant-strain triangles.
//!
//! Degrees of freedom are interleaved per node: `2n` is the x displacement of
//! node `n`, `2n + 1` the y displacement.

mod newmark;
mod stress;

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::mesh::Mesh;
use crate::{Error, Result};

pub use newmark::{newmark_solve, DynamicResponse};
pub use stress::{recover_stress, von_mises};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// kg/m³
    pub density: f64,
    /// m
    pub thickness: f64,
}

impl Material {
    /// Structural steel plate, 10 mm thick.
    pub fn steel() -> Self {
        Self {
            youngs_modulus: 200e9,
            poisson_ratio: 0.3,
            density: 7850.0,
            thickness: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.youngs_modulus > 0.0
            && (0.0..0.5).contains(&self.poisson_ratio)
            && self.density > 0.0
            && self.thickness > 0.0
            && [self.youngs_modulus, self.density, self.thickness]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid material {self:?}")))
        }
    }

    /// Plane-stress constitutive matrix mapping (εxx, εyy, γxy) to (σxx, σyy, σxy).
    pub fn plane_stress_matrix(&self) -> Matrix3<f64> {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let c = e / (1.0 - nu * nu);
        Matrix3::new(c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0)
    }
}

impl Default for Material {
    fn default() -> Self {
        Self::steel()
    }
}

pub(crate) type StrainDisplacement = SMatrix<f64, 3, 6>;

/// Strain-displacement matrix and area of a CST element.
pub(crate) fn cst_b_matrix(p: [[f64; 2]; 3]) -> (StrainDisplacement, f64) {
    let [[x1, y1], [x2, y2], [x3, y3]] = p;
    let two_a = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1);
    let b = [y2 - y3, y3 - y1, y1 - y2];
    let c = [x3 - x2, x1 - x3, x2 - x1];
    let mut m = StrainDisplacement::zeros();
    for i in 0..3 {
        m[(0, 2 * i)] = b[i] / two_a;
        m[(1, 2 * i + 1)] = c[i] / two_a;
        m[(2, 2 * i)] = c[i] / two_a;
        m[(2, 2 * i + 1)] = b[i] / two_a;
    }
    (m, two_a / 2.0)
}

/// `t · A · Bᵀ D B` for one triangle.
pub fn element_stiffness(p: [[f64; 2]; 3], material: &Material) -> SMatrix<f64, 6, 6> {
    let (b, area) = cst_b_matrix(p);
    b.transpose() * material.plane_stress_matrix() * b * (material.thickness * area)
}

/// Assembled stiffness, lumped mass and constraint set.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub stiffness: CscMatrix<f64>,
    /// Diagonal of the lumped mass matrix, one entry per DOF (kg).
    pub mass: Vec<f64>,
    /// `fixed[dof]` is true for constrained degrees of freedom.
    pub fixed: Vec<bool>,
}

impl SystemMatrices {
    pub fn from_parts(stiffness: CscMatrix<f64>, mass: Vec<f64>, fixed: Vec<bool>) -> Result<Self> {
        let n = mass.len();
        if stiffness.nrows() != n || stiffness.ncols() != n || fixed.len() != n {
            return Err(Error::shape(format!(
                "stiffness {}x{}, mass {n}, fixed {}",
                stiffness.nrows(),
                stiffness.ncols(),
                fixed.len()
            )));
        }
        Ok(Self {
            stiffness,
            mass,
            fixed,
        })
    }

    pub fn num_dofs(&self) -> usize {
        self.mass.len()
    }

    /// Constrain both DOFs of every node with `fixed_nodes[n]`.
    pub fn constrain_nodes(&mut self, fixed_nodes: &[bool]) {
        for (n, &f) in fixed_nodes.iter().enumerate() {
            if f {
                self.fixed[2 * n] = true;
                self.fixed[2 * n + 1] = true;
            }
        }
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.num_dofs()).filter(|&d| !self.fixed[d]).collect()
    }

    pub fn mass_matrix(&self) -> CscMatrix<f64> {
        let n = self.num_dofs();
        let mut coo = CooMatrix::new(n, n);
        for (i, &m) in self.mass.iter().enumerate() {
            coo.push(i, i, m);
        }
        CscMatrix::from(&coo)
    }

    pub fn stiffness_times(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        for (j, col) in self.stiffness.col_iter().enumerate() {
            let uj = u[j];
            if uj == 0.0 {
                continue;
            }
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                out[i] += v * uj;
            }
        }
        out
    }

    /// Cholesky factor of `K_ff + shift · M_ff` over free DOFs.
    pub(crate) fn factor_free(&self, shift: f64) -> Result<FreeSystem> {
        let free = self.free_dofs();
        if free.is_empty() {
            return Err(Error::Solver("no free degrees of freedom".into()));
        }
        let order = reverse_cuthill_mckee(&self.stiffness, &free);
        let mut slot = vec![usize::MAX; self.num_dofs()];
        for (k, &d) in order.iter().enumerate() {
            slot[d] = k;
        }
        let nf = order.len();
        let mut coo = CooMatrix::new(nf, nf);
        for (j, col) in self.stiffness.col_iter().enumerate() {
            if slot[j] == usize::MAX {
                continue;
            }
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                if slot[i] != usize::MAX {
                    coo.push(slot[i], slot[j], v);
                }
            }
        }
        if shift != 0.0 {
            for &d in &order {
                coo.push(slot[d], slot[d], shift * self.mass[d]);
            }
        }
        let csc = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&csc)
            .map_err(|e| Error::Solver(format!("effective matrix is singular: {e:?}")))?;
        Ok(FreeSystem { order, chol })
    }

    /// MatrixMarket coordinate dump of K and M (debugging aid).
    pub fn write_matrix_market<W: Write>(&self, mut k_out: W, mut m_out: W) -> Result<()> {
        let n = self.num_dofs();
        writeln!(k_out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(k_out, "{n} {n} {}", self.stiffness.nnz())?;
        for (j, col) in self.stiffness.col_iter().enumerate() {
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                writeln!(k_out, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        writeln!(m_out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(m_out, "{n} {n} {n}")?;
        for (i, &m) in self.mass.iter().enumerate() {
            writeln!(m_out, "{} {} {:e}", i + 1, i + 1, m)?;
        }
        Ok(())
    }
}

/// Factorized free-DOF system in bandwidth-reducing order.
pub(crate) struct FreeSystem {
    order: Vec<usize>,
    chol: CscCholesky<f64>,
}

impl FreeSystem {
    /// Solve for the free DOFs given a full-length right-hand side; constrained
    /// entries of the result are zero.
    pub(crate) fn solve(&self, rhs_full: &[f64]) -> Vec<f64> {
        let b = DVector::from_iterator(self.order.len(), self.order.iter().map(|&d| rhs_full[d]));
        let x: DMatrix<f64> = self.chol.solve(&b);
        let mut out = vec![0.0; rhs_full.len()];
        for (k, &d) in self.order.iter().enumerate() {
            out[d] = x[(k, 0)];
        }
        out
    }
}

fn reverse_cuthill_mckee(k: &CscMatrix<f64>, free: &[usize]) -> Vec<usize> {
    let n = k.ncols();
    let mut is_free = vec![false; n];
    for &d in free {
        is_free[d] = true;
    }
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            if !is_free[j] {
                return Vec::new();
            }
            k.col(j)
                .row_indices()
                .iter()
                .copied()
                .filter(|&i| i != j && is_free[i])
                .collect()
        })
        .collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(free.len());
    let mut seeds: Vec<usize> = free.to_vec();
    seeds.sort_by_key(|&d| (adj[d].len(), d));
    for &s in &seeds {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let start = order.len();
        order.push(s);
        let mut head = start;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (adj[w].len(), w));
            for w in nb {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();
    order
}

/// Assemble CST stiffness and row-sum lumped mass; no DOFs are constrained.
pub fn assemble(mesh: &Mesh, material: &Material) -> Result<SystemMatrices> {
    material.validate()?;
    let ndof = 2 * mesh.num_nodes();
    let mut coo = CooMatrix::new(ndof, ndof);
    let mut mass = vec![0.0; ndof];
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| mesh.nodes[i]);
        let area = mesh.triangle_signed_area(e);
        if !(area > 0.0) {
            return Err(Error::Assembly {
                element: e,
                reason: format!("signed area {area:e} is not positive"),
            });
        }
        let ke = element_stiffness(p, material);
        let dofs = [2 * tri[0], 2 * tri[0] + 1, 2 * tri[1], 2 * tri[1] + 1, 2 * tri[2], 2 * tri[2] + 1];
        for a in 0..6 {
            for b in 0..6 {
                coo.push(dofs[a], dofs[b], ke[(a, b)]);
            }
        }
        let m_node = material.density * material.thickness * area / 3.0;
        for &n in tri {
            mass[2 * n] += m_node;
            mass[2 * n + 1] += m_node;
        }
    }
    Ok(SystemMatrices {
        stiffness: CscMatrix::from(&coo),
        mass,
        fixed: vec![false; ndof],
    })
}

/// Solve `K u = f` over the free DOFs.
pub fn static_solve(sys: &SystemMatrices, force: &[f64]) -> Result<Vec<f64>> {
    if force.len() != sys.num_dofs() {
        return Err(Error::shape("force vector length must equal DOF count"));
    }
    Ok(sys.factor_free(0.0)?.solve(force))
}
