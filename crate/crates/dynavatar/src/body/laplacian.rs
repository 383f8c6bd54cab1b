//! Uniform graph Laplacian of the mesh: `L[i,i] = 1`, `L[i,j] = -1/deg(i)`
//! over edge neighbors. Rows sum to zero, so constant fields are in the
//! kernel; applied to vertex offsets it is the second-order smoothness
//! regularizer.

use super::BodyModel;
use crate::error::{Error, Result};
use crate::tape::SparseMap;
use std::collections::BTreeSet;
use std::rc::Rc;

pub fn laplacian(body: &BodyModel) -> Result<Rc<SparseMap>> {
    let v = body.vertex_count();
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); v];
    for f in &body.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }
    }
    let mut rows = Vec::with_capacity(v);
    for (i, n) in nbrs.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::InvalidModel(format!("isolated vertex {i}")));
        }
        let deg = n.len() as f64;
        let mut row = Vec::with_capacity(n.len() + 1);
        row.push((i, 1.0));
        for &j in n {
            row.push((j, -1.0 / deg));
        }
        rows.push(row);
    }
    Ok(Rc::new(SparseMap::from_rows(v, rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::procgen;
    use ndarray::Array2;

    #[test]
    fn constant_field_is_in_the_kernel() {
        let body = procgen::default_body(10, 8);
        let lap = laplacian(&body).unwrap();
        let field = Array2::from_elem((body.vertex_count(), 3), 3.7);
        let out = lap.apply(&field.view());
        let max = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12, "L * const = {max}");
    }

    #[test]
    fn rows_sum_to_zero() {
        let body = procgen::default_body(8, 7);
        let lap = laplacian(&body).unwrap();
        for i in 0..lap.out_rows {
            let s: f64 = lap.row(i).iter().map(|(_, w)| w).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn linear_field_vanishes_on_symmetric_planar_interior() {
        // Regular diagonal-split planar grid: interior vertices have six
        // neighbors placed symmetrically, so affine fields are in the kernel
        // there.
        let n = 6;
        let mut verts = Array2::<f64>::zeros((n * n, 3));
        for i in 0..n {
            for j in 0..n {
                verts[[i * n + j, 0]] = j as f64;
                verts[[i * n + j, 1]] = i as f64;
            }
        }
        let mut faces = Vec::new();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let a = i * n + j;
                let b = i * n + j + 1;
                let c = (i + 1) * n + j + 1;
                let d = (i + 1) * n + j;
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        let body = procgen::mesh_only_body(verts.clone(), faces);
        let lap = laplacian(&body).unwrap();
        let mut field = Array2::<f64>::zeros((n * n, 1));
        for i in 0..n * n {
            field[[i, 0]] = 2.0 * verts[[i, 0]] - 0.5 * verts[[i, 1]] + 1.0;
        }
        let out = lap.apply(&field.view());
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                assert!(
                    out[[i * n + j, 0]].abs() < 1e-12,
                    "interior residual at ({i},{j}): {}",
                    out[[i * n + j, 0]]
                );
            }
        }
    }

    #[test]
    fn icosphere_smoothing_direction_points_inward() {
        // For L = I - A/deg, (L p)_i = p_i - mean(neighbors). On a convex
        // surface the neighbor mean lies strictly inside, so the smoothing
        // displacement -(L p) (toward the neighbor mean) points inward at
        // every vertex: dot with the outward normal < 0.
        let (v, f) = procgen::icosphere(2);
        let body = procgen::mesh_only_body(v.clone(), f);
        let lap = laplacian(&body).unwrap();
        let out = lap.apply(&v.view());
        // on a sphere the outward normal at vertex i is the position itself
        for i in 0..v.nrows() {
            let dot = -(out[[i, 0]] * v[[i, 0]] + out[[i, 1]] * v[[i, 1]] + out[[i, 2]] * v[[i, 2]]);
            assert!(
                dot < 0.0,
                "smoothing direction must point inward at vertex {i} (dot={dot})"
            );
        }
    }

    #[test]
    fn isolated_vertex_rejected() {
        let verts = ndarray::arr2(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 5.0, 5.0],
        ]);
        let body = procgen::mesh_only_body(verts, vec![[0, 1, 2]]);
        assert!(laplacian(&body).is_err());
    }
}
