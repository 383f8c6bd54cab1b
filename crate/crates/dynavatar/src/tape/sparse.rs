//! Fixed sparse linear maps over row vectors.
//!
//! The UV rasterizer, UV sampler and mesh Laplacian are all linear in their
//! per-row attributes with coefficients that depend only on static geometry
//! (the atlas, the mesh connectivity). Each is precomputed once as a
//! [`SparseMap`] and applied as a single differentiable op.

use ndarray::{Array2, ArrayView2};

/// CSR-style sparse matrix mapping `[in_rows, c]` to `[out_rows, c]`
/// channel-by-channel: `out[i] = sum_k w_ik * x[col_ik]`.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub in_rows: usize,
    pub out_rows: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseMap {
    /// Build from per-output-row entry lists.
    pub fn from_rows(in_rows: usize, rows: Vec<Vec<(usize, f64)>>) -> SparseMap {
        let out_rows = rows.len();
        let mut offsets = Vec::with_capacity(out_rows + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, w) in row {
                debug_assert!(c < in_rows);
                entries.push((c, w));
            }
            offsets.push(entries.len());
        }
        SparseMap {
            in_rows,
            out_rows,
            offsets,
            entries,
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn apply(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.in_rows, "sparse apply: row count mismatch");
        let c = x.ncols();
        let mut out = Array2::<f64>::zeros((self.out_rows, c));
        for i in 0..self.out_rows {
            let mut acc = out.row_mut(i);
            for &(j, w) in self.row(i) {
                ndarray::Zip::from(&mut acc).and(&x.row(j)).for_each(|a, &v| *a += w * v);
            }
        }
        out
    }

    /// Transpose application (the backward pass): `[out_rows, c] -> [in_rows, c]`.
    pub fn apply_transpose(&self, g: &ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.out_rows);
        let c = g.ncols();
        let mut out = Array2::<f64>::zeros((self.in_rows, c));
        for i in 0..self.out_rows {
            let gi = g.row(i);
            for &(j, w) in self.row(i) {
                let mut acc = out.row_mut(j);
                ndarray::Zip::from(&mut acc).and(&gi).for_each(|a, &v| *a += w * v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{grad_check, ops, Tensor};
    use ndarray::arr2;
    use std::rc::Rc;

    #[test]
    fn apply_and_transpose_are_adjoint() {
        let map = SparseMap::from_rows(
            3,
            vec![vec![(0, 0.5), (2, 1.5)], vec![(1, -1.0)], vec![], vec![(0, 2.0), (1, 0.25)]],
        );
        let x = arr2(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let y = map.apply(&x.view());
        assert_eq!(y[[0, 0]], 5.0);
        assert_eq!(y[[3, 1]], 25.0);
        // <Ax, y> == <x, A^T y>
        let g = arr2(&[[1.0, 0.0], [2.0, 1.0], [3.0, -1.0], [4.0, 0.5]]);
        let lhs: f64 = (&y * &g).sum();
        let xt = map.apply_transpose(&g.view());
        let rhs: f64 = (&x * &xt).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sparse_apply_grad_matches_fd() {
        let map = Rc::new(SparseMap::from_rows(
            4,
            vec![vec![(0, 1.0), (1, -0.5), (3, 0.25)], vec![(2, 2.0)], vec![(1, 1.0), (1, 1.0)]],
        ));
        let x = Tensor::leaf(arr2(&[[0.3, 1.0], [-0.2, 0.5], [0.9, -1.1], [0.4, 0.0]]).into_dyn());
        let e = grad_check(|| ops::sparse_apply(&map, &x).sqr().sum_all(), &[x.clone()], 1e-6);
        assert!(e < 1e-9, "{e}");
    }
}
