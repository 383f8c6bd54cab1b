//! Nearest-vertex queries against a fixed vertex set, uniform-grid
//! accelerated. Ties break to the lowest vertex index, identically to a
//! brute-force scan.

use ndarray::ArrayView2;

#[derive(Debug, Clone)]
pub struct NearestVertexGrid {
    verts: Vec<[f64; 3]>,
    lo: [f64; 3],
    hi: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl NearestVertexGrid {
    pub fn build(verts: &ArrayView2<'_, f64>) -> NearestVertexGrid {
        assert!(verts.nrows() > 0, "empty vertex set");
        let n = verts.nrows();
        let mut lo = [f64::MAX; 3];
        let mut hi = [f64::MIN; 3];
        for r in verts.rows() {
            for d in 0..3 {
                lo[d] = lo[d].min(r[d]);
                hi[d] = hi[d].max(r[d]);
            }
        }
        let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0_f64, f64::max).max(1e-9);
        // ~ a few vertices per cell
        let target = (n as f64).powf(1.0 / 3.0).ceil().max(1.0);
        let cell = extent / target;
        let dims = [
            (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1),
            (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1),
            (((hi[2] - lo[2]) / cell).floor() as usize + 1).max(1),
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut vlist = Vec::with_capacity(n);
        for (i, r) in verts.rows().into_iter().enumerate() {
            let p = [r[0], r[1], r[2]];
            let c = Self::cell_of(&p, &lo, cell, &dims);
            cells[c].push(i as u32);
            vlist.push(p);
        }
        NearestVertexGrid {
            verts: vlist,
            lo,
            hi,
            cell,
            dims,
            cells,
        }
    }

    fn cell_of(p: &[f64; 3], lo: &[f64; 3], cell: f64, dims: &[usize; 3]) -> usize {
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let c = ((p[d] - lo[d]) / cell).floor();
            idx[d] = (c.max(0.0) as usize).min(dims[d] - 1);
        }
        (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
    }

    /// Index of the nearest vertex; ties resolve to the lowest index.
    pub fn nearest(&self, p: &[f64; 3]) -> usize {
        // the ring-distance early exit below assumes p lies inside its home
        // cell; fall back to a scan for points outside the grid
        for d in 0..3 {
            if p[d] < self.lo[d] - self.cell || p[d] > self.hi[d] + self.cell {
                return self.nearest_scan(p);
            }
        }
        let mut home = [0isize; 3];
        for d in 0..3 {
            let c = ((p[d] - self.lo[d]) / self.cell).floor();
            home[d] = (c as isize).clamp(0, 0.max(self.dims[d] as isize - 1));
        }
        let mut best_d2 = f64::MAX;
        let mut best_i = usize::MAX;
        let mut consider = |i: u32, verts: &[[f64; 3]]| {
            let v = &verts[i as usize];
            let d2 = (p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2) + (p[2] - v[2]).powi(2);
            let i = i as usize;
            if d2 < best_d2 || (d2 == best_d2 && i < best_i) {
                best_d2 = d2;
                best_i = i;
            }
        };
        let max_ring = self.dims.iter().max().unwrap() + 1;
        for ring in 0..=max_ring {
            // cells at Chebyshev distance `ring` from home
            let mut any_cell = false;
            for dx in -(ring as isize)..=(ring as isize) {
                for dy in -(ring as isize)..=(ring as isize) {
                    for dz in -(ring as isize)..=(ring as isize) {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring as isize {
                            continue;
                        }
                        let cx = home[0] + dx;
                        let cy = home[1] + dy;
                        let cz = home[2] + dz;
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0] as isize
                            || cy >= self.dims[1] as isize
                            || cz >= self.dims[2] as isize
                        {
                            continue;
                        }
                        any_cell = true;
                        let c = (cx as usize * self.dims[1] + cy as usize) * self.dims[2] + cz as usize;
                        for &i in &self.cells[c] {
                            consider(i, &self.verts);
                        }
                    }
                }
            }
            if best_i != usize::MAX {
                // p sits within one cell of its (clamped) home, so cells at
                // Chebyshev distance > ring are at least (ring-1)*cell away
                let bound = (ring as f64 - 1.0) * self.cell;
                if bound > 0.0 && bound * bound > best_d2 {
                    break;
                }
            }
            if !any_cell && best_i != usize::MAX {
                break;
            }
        }
        if best_i == usize::MAX {
            return self.nearest_scan(p);
        }
        best_i
    }

    fn nearest_scan(&self, p: &[f64; 3]) -> usize {
        let mut best_d2 = f64::MAX;
        let mut best_i = 0;
        for (i, v) in self.verts.iter().enumerate() {
            let d2 = (p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2) + (p[2] - v[2]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
            }
        }
        best_i
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        self.verts[i]
    }

    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }
}

/// Reference implementation for oracle tests.
pub fn nearest_brute_force(verts: &ArrayView2<'_, f64>, p: &[f64; 3]) -> usize {
    let mut best_d2 = f64::MAX;
    let mut best_i = usize::MAX;
    for (i, r) in verts.rows().into_iter().enumerate() {
        let d2 = (p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2) + (p[2] - r[2]).powi(2);
        if d2 < best_d2 {
            best_d2 = d2;
            best_i = i;
        }
    }
    best_i
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_matches_brute_force_on_1000_random_points() {
        let body = crate::body::subdivide(&crate::body::procgen::default_body(12, 9)).unwrap();
        let verts = body.template_vertices.clone();
        let grid = NearestVertexGrid::build(&verts.view());
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let p = [
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            ];
            assert_eq!(grid.nearest(&p), nearest_brute_force(&verts.view(), &p));
        }
    }

    #[test]
    fn exact_ties_resolve_to_lowest_index() {
        // two vertices symmetric about the query point
        let verts = ndarray::arr2(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 5.0, 0.0],
        ]);
        let grid = NearestVertexGrid::build(&verts.view());
        let p = [0.0, 0.0, 0.0];
        assert_eq!(grid.nearest(&p), 0);
        assert_eq!(nearest_brute_force(&verts.view(), &p), 0);
        // coincident vertices (the seam) are an exact tie too
        let verts2 = ndarray::arr2(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5], [2.0, 2.0, 2.0]]);
        let grid2 = NearestVertexGrid::build(&verts2.view());
        assert_eq!(grid2.nearest(&[0.4, 0.5, 0.5]), 0);
    }

    #[test]
    fn far_points_still_resolve() {
        let verts = ndarray::arr2(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        let grid = NearestVertexGrid::build(&verts.view());
        assert_eq!(grid.nearest(&[100.0, 100.0, 100.0]), 1);
        assert_eq!(grid.nearest(&[-50.0, 0.0, 0.0]), 0);
    }
}
