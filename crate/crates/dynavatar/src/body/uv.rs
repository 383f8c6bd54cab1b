//! The UV atlas: rasterizing per-vertex attributes into a texture-space grid
//! and sampling grids back at UV points.
//!
//! Both directions are linear in the attributes with coefficients fixed by
//! the atlas geometry, so they are precomputed as [`SparseMap`]s once per
//! model: texel (i,j) samples the UV point ((j+0.5)/W, (i+0.5)/H) by
//! barycentric interpolation inside its covering triangle; point sampling is
//! bilinear over valid texels with weight renormalization and a
//! nearest-valid-texel fallback.

use super::BodyModel;
use crate::error::Result;
use crate::tape::{sparse_apply, SparseMap, Tensor};
use ndarray::{Array2, Array3, ArrayView2};
use std::collections::VecDeque;
use std::rc::Rc;

/// A feature image over the UV atlas plus its validity mask.
#[derive(Debug, Clone)]
pub struct UvGrid {
    /// `[C, H, W]`.
    pub data: Array3<f64>,
    /// `[H, W]`; texels outside every UV triangle are invalid and zero.
    pub mask: Array2<bool>,
}

/// Precomputed rasterization/sampling machinery for one body at one
/// resolution. The validity mask depends only on the atlas.
pub struct Atlas {
    pub res: usize,
    pub mask: Array2<bool>,
    /// Covering face per texel (-1 outside), first face in model order wins.
    pub texel_face: Vec<i32>,
    /// For each invalid texel, the index of its nearest valid texel (BFS over
    /// the 4-neighborhood); identity for valid texels.
    pub nearest_valid: Vec<usize>,
    /// V-attr rows -> res^2 texel rows.
    pub raster_map: Rc<SparseMap>,
    /// res^2 texel rows -> V rows (bilinear at each vertex's own UV).
    pub vertex_sample: Rc<SparseMap>,
    /// Whether a vertex's own sample had to fall back to nearest-valid.
    pub vertex_sample_fallback: Vec<bool>,
}

impl Atlas {
    pub fn build(body: &BodyModel, res: usize) -> Result<Atlas> {
        assert!(res >= 2);
        let v_count = body.vertex_count();
        let uv = &body.uv_coords;
        let mut texel_face = vec![-1_i32; res * res];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); res * res];

        for (fi, f) in body.faces.iter().enumerate() {
            let t = [
                [uv[[f[0], 0]], uv[[f[0], 1]]],
                [uv[[f[1], 0]], uv[[f[1], 1]]],
                [uv[[f[2], 0]], uv[[f[2], 1]]],
            ];
            let lo_u = t.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
            let hi_u = t.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
            let lo_v = t.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
            let hi_v = t.iter().map(|p| p[1]).fold(f64::MIN, f64::max);
            let j0 = ((lo_u * res as f64 - 0.5).floor().max(0.0)) as usize;
            let j1 = ((hi_u * res as f64 - 0.5).ceil()).min((res - 1) as f64) as usize;
            let i0 = ((lo_v * res as f64 - 0.5).floor().max(0.0)) as usize;
            let i1 = ((hi_v * res as f64 - 0.5).ceil()).min((res - 1) as f64) as usize;
            for i in i0..=i1 {
                let pv = (i as f64 + 0.5) / res as f64;
                for j in j0..=j1 {
                    let tex = i * res + j;
                    if texel_face[tex] >= 0 {
                        continue;
                    }
                    let pu = (j as f64 + 0.5) / res as f64;
                    if let Some(w) = barycentric_in_triangle(&t, pu, pv) {
                        texel_face[tex] = fi as i32;
                        rows[tex] = vec![(f[0], w[0]), (f[1], w[1]), (f[2], w[2])];
                    }
                }
            }
        }

        let mut mask = Array2::<bool>::from_elem((res, res), false);
        for i in 0..res {
            for j in 0..res {
                mask[[i, j]] = texel_face[i * res + j] >= 0;
            }
        }
        let nearest_valid = nearest_valid_bfs(&mask);
        let raster_map = Rc::new(SparseMap::from_rows(v_count, rows));

        let (vertex_sample, vertex_sample_fallback) = {
            let pts = body.uv_coords.view();
            let (map, flags) = sample_map_impl(res, &mask, &nearest_valid, &pts);
            (Rc::new(map), flags)
        };

        Ok(Atlas {
            res,
            mask,
            texel_face,
            nearest_valid,
            raster_map,
            vertex_sample,
            vertex_sample_fallback,
        })
    }

    /// Rasterize per-vertex attributes `[V, C]` into a UV grid.
    pub fn rasterize(&self, attr: &ArrayView2<'_, f64>) -> UvGrid {
        let flat = self.raster_map.apply(attr); // [res^2, C]
        let c = attr.ncols();
        let mut data = Array3::<f64>::zeros((c, self.res, self.res));
        for i in 0..self.res {
            for j in 0..self.res {
                for ch in 0..c {
                    data[[ch, i, j]] = flat[[i * self.res + j, ch]];
                }
            }
        }
        UvGrid {
            data,
            mask: self.mask.clone(),
        }
    }

    /// Tape version: `[V, C]` tensor -> `[C, res, res]` tensor.
    pub fn rasterize_t(&self, attr: &Tensor) -> Tensor {
        let c = attr.shape()[1];
        sparse_apply(&self.raster_map, attr)
            .transpose()
            .reshape(&[c, self.res, self.res])
    }

    /// Build a sampling map for a fixed point set `[N, 2]` in `[0,1]^2`.
    /// Returns the map (res^2 rows -> N rows) and per-point fallback flags.
    pub fn sample_map(&self, pts: &ArrayView2<'_, f64>) -> (SparseMap, Vec<bool>) {
        sample_map_impl(self.res, &self.mask, &self.nearest_valid, pts)
    }

    /// Sample a grid at arbitrary UV points (plain path).
    pub fn sample(&self, grid: &UvGrid, pts: &ArrayView2<'_, f64>) -> (Array2<f64>, Vec<bool>) {
        let (map, flags) = self.sample_map(pts);
        let c = grid.data.dim().0;
        let flat = grid_to_flat(&grid.data, c, self.res);
        (map.apply(&flat.view()), flags)
    }

    /// Tape version of per-vertex sampling at the model's own UV coords:
    /// `[C, res, res]` grid tensor -> `[V, C]` tensor.
    pub fn sample_vertices_t(&self, grid: &Tensor) -> Tensor {
        let shape = grid.shape();
        let c = shape[0];
        let flat = grid.reshape(&[c, self.res * self.res]).transpose();
        sparse_apply(&self.vertex_sample, &flat)
    }

    /// Zero out invalid texels of a `[C,res,res]` tensor (grid outputs of
    /// networks are masked to the atlas support).
    pub fn mask_grid_t(&self, grid: &Tensor) -> Tensor {
        let c = grid.shape()[0];
        let mut m = Array3::<f64>::zeros((c, self.res, self.res));
        for i in 0..self.res {
            for j in 0..self.res {
                if self.mask[[i, j]] {
                    for ch in 0..c {
                        m[[ch, i, j]] = 1.0;
                    }
                }
            }
        }
        grid.mul(&Tensor::constant(m.into_dyn()))
    }

    pub fn valid_texel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) fn grid_to_flat(data: &Array3<f64>, c: usize, res: usize) -> Array2<f64> {
    let mut flat = Array2::<f64>::zeros((res * res, c));
    for i in 0..res {
        for j in 0..res {
            for ch in 0..c {
                flat[[i * res + j, ch]] = data[[ch, i, j]];
            }
        }
    }
    flat
}

/// Barycentric coordinates of (u,v) in triangle `t` if strictly inside
/// (inclusive of edges within 1e-12), else None. Works for either winding.
fn barycentric_in_triangle(t: &[[f64; 2]; 3], u: f64, v: f64) -> Option<[f64; 3]> {
    let area =
        (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
    if area.abs() < 1e-15 {
        return None;
    }
    let w0 = ((t[1][0] - u) * (t[2][1] - v) - (t[2][0] - u) * (t[1][1] - v)) / area;
    let w1 = ((t[2][0] - u) * (t[0][1] - v) - (t[0][0] - u) * (t[2][1] - v)) / area;
    let w2 = 1.0 - w0 - w1;
    let eps = -1e-12;
    if w0 >= eps && w1 >= eps && w2 >= eps {
        Some([w0, w1, w2])
    } else {
        None
    }
}

/// Multi-source BFS over the 4-neighborhood assigning each texel its nearest
/// valid texel (itself if valid). Deterministic: sources enqueued in index
/// order.
fn nearest_valid_bfs(mask: &Array2<bool>) -> Vec<usize> {
    let (h, w) = mask.dim();
    let mut near = vec![usize::MAX; h * w];
    let mut q = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] {
                near[i * w + j] = i * w + j;
                q.push_back((i, j));
            }
        }
    }
    while let Some((i, j)) = q.pop_front() {
        let src = near[i * w + j];
        let mut push = |ni: isize, nj: isize, q: &mut VecDeque<(usize, usize)>| {
            if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                return;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            if near[ni * w + nj] == usize::MAX {
                near[ni * w + nj] = src;
                q.push_back((ni, nj));
            }
        };
        push(i as isize - 1, j as isize, &mut q);
        push(i as isize + 1, j as isize, &mut q);
        push(i as isize, j as isize - 1, &mut q);
        push(i as isize, j as isize + 1, &mut q);
    }
    near
}

fn sample_map_impl(
    res: usize,
    mask: &Array2<bool>,
    nearest_valid: &[usize],
    pts: &ArrayView2<'_, f64>,
) -> (SparseMap, Vec<bool>) {
    let mut rows = Vec::with_capacity(pts.nrows());
    let mut flags = Vec::with_capacity(pts.nrows());
    for p in pts.rows() {
        let (u, v) = (p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0));
        let x = (u * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        let y = (v * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        let j0 = (x.floor() as usize).min(res - 2);
        let i0 = (y.floor() as usize).min(res - 2);
        let fx = x - j0 as f64;
        let fy = y - i0 as f64;
        let corners = [
            (i0, j0, (1.0 - fx) * (1.0 - fy)),
            (i0, j0 + 1, fx * (1.0 - fy)),
            (i0 + 1, j0, (1.0 - fx) * fy),
            (i0 + 1, j0 + 1, fx * fy),
        ];
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut total = 0.0;
        for &(i, j, w) in &corners {
            if mask[[i, j]] && w > 0.0 {
                entries.push((i * res + j, w));
                total += w;
            }
        }
        if total > 1e-12 {
            for e in entries.iter_mut() {
                e.1 /= total;
            }
            rows.push(entries);
            flags.push(false);
        } else {
            // all-invalid neighborhood: nearest valid texel, flagged
            let i = y.round() as usize;
            let j = x.round() as usize;
            let t = nearest_valid[i.min(res - 1) * res + j.min(res - 1)];
            rows.push(vec![(t, 1.0)]);
            flags.push(true);
        }
    }
    (SparseMap::from_rows(res * res, rows), flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{procgen, subdivide};
    use ndarray::Array2;

    fn one_triangle_body() -> BodyModel {
        let verts = ndarray::arr2(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let mut body = procgen::mesh_only_body(verts, vec![[0, 1, 2]]);
        body.uv_coords = ndarray::arr2(&[[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]]);
        body
    }

    #[test]
    fn constant_attribute_fills_valid_texels() {
        let body = one_triangle_body();
        let atlas = Atlas::build(&body, 32).unwrap();
        let attr = Array2::from_elem((3, 2), 4.25);
        let grid = atlas.rasterize(&attr.view());
        let mut seen = 0;
        for i in 0..32 {
            for j in 0..32 {
                if grid.mask[[i, j]] {
                    seen += 1;
                    // barycentric weights sum to 1 within an ulp
                    assert!((grid.data[[0, i, j]] - 4.25).abs() < 1e-12);
                    assert!((grid.data[[1, i, j]] - 4.25).abs() < 1e-12);
                } else {
                    assert_eq!(grid.data[[0, i, j]], 0.0);
                }
            }
        }
        assert!(seen > 50, "triangle should cover many texels, got {seen}");
    }

    #[test]
    fn texel_values_match_independent_barycentric_oracle() {
        // attributes = identity => texel value IS its barycentric coordinate
        let body = one_triangle_body();
        let res = 64;
        let atlas = Atlas::build(&body, res).unwrap();
        let attr = ndarray::arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let grid = atlas.rasterize(&attr.view());

        // independent oracle: solve the 2x2 system for barycentrics directly
        let t = [[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]];
        for i in 0..res {
            for j in 0..res {
                let u = (j as f64 + 0.5) / res as f64;
                let v = (i as f64 + 0.5) / res as f64;
                let det = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1])
                    - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
                let w1 = ((u - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (v - t[0][1])) / det;
                let w2 = ((t[1][0] - t[0][0]) * (v - t[0][1]) - (u - t[0][0]) * (t[1][1] - t[0][1])) / det;
                let w0 = 1.0 - w1 - w2;
                let inside = w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0;
                if inside != grid.mask[[i, j]] {
                    // disagreement allowed only within float slack of an edge
                    let m = w0.min(w1).min(w2);
                    assert!(m.abs() < 1e-9, "mask mismatch off-edge at ({i},{j}): {m}");
                    continue;
                }
                if inside {
                    assert!((grid.data[[0, i, j]] - w0).abs() < 1e-9);
                    assert!((grid.data[[1, i, j]] - w1).abs() < 1e-9);
                    assert!((grid.data[[2, i, j]] - w2).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn validity_mask_depends_only_on_atlas() {
        let body = one_triangle_body();
        let atlas = Atlas::build(&body, 16).unwrap();
        let g1 = atlas.rasterize(&Array2::from_elem((3, 1), 1.0).view());
        let g2 = atlas.rasterize(&Array2::from_elem((3, 5), -7.0).view());
        assert_eq!(g1.mask, g2.mask);
        assert_eq!(g1.mask, atlas.mask);
    }

    #[test]
    fn constant_grid_samples_constant() {
        let body = one_triangle_body();
        let atlas = Atlas::build(&body, 32).unwrap();
        let grid = atlas.rasterize(&Array2::from_elem((3, 2), 2.5).view());
        let pts = ndarray::arr2(&[[0.3, 0.3], [0.2, 0.5], [0.14, 0.12]]);
        let (out, flags) = atlas.sample(&grid, &pts.view());
        assert!(flags.iter().all(|&f| !f));
        for v in out.iter() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn far_outside_point_falls_back_to_nearest_valid_and_is_flagged() {
        let body = one_triangle_body();
        let atlas = Atlas::build(&body, 32).unwrap();
        let grid = atlas.rasterize(&Array2::from_elem((3, 1), 9.0).view());
        let pts = ndarray::arr2(&[[0.98, 0.98]]); // far corner, all-invalid bilinear cell
        let (out, flags) = atlas.sample(&grid, &pts.view());
        assert!(flags[0], "fallback must be flagged");
        assert!((out[[0, 0]] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_on_subdivided_body_within_5_percent() {
        let body = subdivide(&procgen::default_body(24, 16)).unwrap();
        let atlas = Atlas::build(&body, 128).unwrap();
        let attr = body.template_vertices.clone(); // positions as a 3-channel attribute
        let grid = atlas.rasterize(&attr.view());
        let (back, _) = atlas.sample(&grid, &body.uv_coords.view());
        let mut range = [0.0_f64; 3];
        for d in 0..3 {
            let col = attr.column(d);
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            range[d] = hi - lo;
        }
        let mut worst = 0.0_f64;
        let mut worst_vertex = 0;
        for i in 0..body.vertex_count() {
            for d in 0..3 {
                let err = (back[[i, d]] - attr[[i, d]]).abs() / range[d];
                if err > worst {
                    worst = err;
                    worst_vertex = i;
                }
            }
        }
        assert!(
            worst < 0.05,
            "round-trip error {worst:.4} exceeds 5% of range at vertex {worst_vertex} uv=({:.4},{:.4}) got {:?} want {:?}",
            body.uv_coords[[worst_vertex, 0]],
            body.uv_coords[[worst_vertex, 1]],
            back.row(worst_vertex),
            attr.row(worst_vertex),
        );
    }

    #[test]
    fn tape_paths_match_plain_paths() {
        let body = subdivide(&procgen::default_body(10, 8)).unwrap();
        let atlas = Atlas::build(&body, 32).unwrap();
        let attr = body.template_vertices.clone();
        let grid_plain = atlas.rasterize(&attr.view());
        let grid_t = atlas.rasterize_t(&Tensor::constant(attr.clone().into_dyn()));
        for ((c, i, j), &v) in grid_plain.data.indexed_iter() {
            assert_eq!(v, grid_t.data()[[c, i, j]]);
        }
        let (back_plain, _) = atlas.sample(&grid_plain, &body.uv_coords.view());
        let back_t = atlas.sample_vertices_t(&grid_t);
        for ((i, c), &v) in back_plain.indexed_iter() {
            assert_eq!(v, back_t.data()[[i, c]]);
        }
    }

    #[test]
    fn feature_grid_sampling_matches_reshape_contract() {
        // 64-channel grid sampled at all V vertex coords -> [V, 64]
        let body = subdivide(&procgen::default_body(10, 8)).unwrap();
        let atlas = Atlas::build(&body, 128).unwrap();
        let v = body.vertex_count();
        let attr = Array2::from_shape_fn((v, 64), |(i, c)| ((i * 31 + c * 7) % 13) as f64 * 0.1);
        let grid = atlas.rasterize(&attr.view());
        assert_eq!(grid.data.dim(), (64, 128, 128));
        let (out, _) = atlas.sample(&grid, &body.uv_coords.view());
        assert_eq!(out.dim(), (v, 64));
    }
}
