use ndarray::{Array2, ArrayView2};

use super::SystemMatrices;
use crate::{Error, Result};

/// Time histories of the full DOF vector, one row per frame.
#[derive(Debug, Clone)]
pub struct DynamicResponse {
    /// `(T, ndof)`, m
    pub displacement: Array2<f64>,
    /// `(T, ndof)`, m/s
    pub velocity: Array2<f64>,
    /// `(T, ndof)`, m/s²
    pub acceleration: Array2<f64>,
    pub dt: f64,
}

impl DynamicResponse {
    pub fn num_frames(&self) -> usize {
        self.displacement.nrows()
    }

    /// `½ vᵀ M v + ½ uᵀ K u` at frame `t`.
    pub fn energy(&self, sys: &SystemMatrices, t: usize) -> f64 {
        let u = self.displacement.row(t).to_vec();
        let v = self.velocity.row(t);
        let ku = sys.stiffness_times(&u);
        let kinetic: f64 = v.iter().zip(&sys.mass).map(|(v, m)| m * v * v).sum();
        let strain: f64 = u.iter().zip(&ku).map(|(u, f)| u * f).sum();
        0.5 * (kinetic + strain)
    }
}

/// Average-acceleration Newmark integration (β = 1/4, γ = 1/2) from rest.
///
/// `load` is `(ndof, T)`; column `t` is the nodal force vector at time
/// `t · dt`. Frame 0 holds the initial state: zero displacement and velocity
/// and the acceleration balancing the initial load.
pub fn newmark_solve(sys: &SystemMatrices, load: ArrayView2<f64>, dt: f64) -> Result<DynamicResponse> {
    let ndof = sys.num_dofs();
    if load.nrows() != ndof {
        return Err(Error::shape(format!("load has {} rows, system has {ndof} DOFs", load.nrows())));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("time step must be positive"));
    }
    let steps = load.ncols();
    if steps == 0 {
        return Err(Error::shape("load history is empty"));
    }
    let free = sys.free_dofs();
    if let Some(&d) = free.iter().find(|&&d| !(sys.mass[d] > 0.0)) {
        return Err(Error::Solver(format!("free DOF {d} carries no mass")));
    }

    let c0 = 4.0 / (dt * dt);
    let c1 = 4.0 / dt;
    let factor = sys.factor_free(c0)?;

    let mut u = Array2::zeros((steps, ndof));
    let mut v = Array2::zeros((steps, ndof));
    let mut a = Array2::zeros((steps, ndof));
    for &d in &free {
        a[(0, d)] = load[(d, 0)] / sys.mass[d];
    }

    let mut rhs = vec![0.0; ndof];
    for n in 0..steps - 1 {
        for d in 0..ndof {
            rhs[d] = load[(d, n + 1)]
                + sys.mass[d] * (c0 * u[(n, d)] + c1 * v[(n, d)] + a[(n, d)]);
        }
        let next = factor.solve(&rhs);
        for &d in &free {
            let un = next[d];
            let an = c0 * (un - u[(n, d)]) - c1 * v[(n, d)] - a[(n, d)];
            u[(n + 1, d)] = un;
            a[(n + 1, d)] = an;
            v[(n + 1, d)] = v[(n, d)] + 0.5 * dt * (a[(n, d)] + an);
        }
    }
    if u.iter().chain(a.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Solver("non-finite response".into()));
    }
    Ok(DynamicResponse {
        displacement: u,
        velocity: v,
        acceleration: a,
        dt,
    })
}
