use nalgebra::SVector;

use super::{cst_b_matrix, Material};
use crate::mesh::Mesh;
use crate::{Error, Result};

/// Nodal `(σxx, σyy, σxy)` in Pa from interleaved nodal displacements.
///
/// Element stresses `D B u_e` are constant per triangle; nodal values are the
/// area-weighted average over incident triangles.
pub fn recover_stress(mesh: &Mesh, material: &Material, u: &[f64]) -> Result<Vec<[f64; 3]>> {
    if u.len() != 2 * mesh.num_nodes() {
        return Err(Error::shape(format!(
            "displacement length {} for {} nodes",
            u.len(),
            mesh.num_nodes()
        )));
    }
    let d = material.plane_stress_matrix();
    let mut acc = vec![[0.0; 3]; mesh.num_nodes()];
    let mut weight = vec![0.0; mesh.num_nodes()];
    for tri in &mesh.triangles {
        let (b, area) = cst_b_matrix(tri.map(|i| mesh.nodes[i]));
        let ue = SVector::<f64, 6>::from_fn(|k, _| u[2 * tri[k / 2] + k % 2]);
        let s = d * (b * ue);
        for &n in tri {
            for c in 0..3 {
                acc[n][c] += area * s[c];
            }
            weight[n] += area;
        }
    }
    for (s, w) in acc.iter_mut().zip(&weight) {
        if *w > 0.0 {
            for c in s.iter_mut() {
                *c /= w;
            }
        }
    }
    Ok(acc)
}

/// Plane-stress von Mises equivalent stress.
pub fn von_mises(sxx: f64, syy: f64, sxy: f64) -> f64 {
    (sxx * sxx + syy * syy - sxx * syy + 3.0 * sxy * sxy).max(0.0).sqrt()
}
