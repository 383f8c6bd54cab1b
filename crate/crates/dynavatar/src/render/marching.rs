//! Marching cubes over a regular grid.

use super::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE};
use ndarray::Array2;
use rayon::prelude::*;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub verts: Array2<f64>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Extract the zero level set of `field` over `[lo, hi]` at `res` cells per
/// axis (`res >= 8`). An all-positive or all-negative field yields an empty
/// mesh. Grid evaluation is parallel; assembly is sequential and
/// deterministic.
pub fn marching_cubes(
    field: &(dyn Fn(&[f64; 3]) -> f64 + Sync),
    lo: [f64; 3],
    hi: [f64; 3],
    res: [usize; 3],
) -> TriMesh {
    let n = [res[0] + 1, res[1] + 1, res[2] + 1];
    let step = grid_step(&lo, &hi, &res);
    let point = |i: usize, j: usize, k: usize| {
        [
            lo[0] + i as f64 * step[0],
            lo[1] + j as f64 * step[1],
            lo[2] + k as f64 * step[2],
        ]
    };
    // grid values, parallel over x-slabs (pure per-index writes)
    let values: Vec<f64> = (0..n[0])
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut slab = Vec::with_capacity(n[1] * n[2]);
            for j in 0..n[1] {
                for k in 0..n[2] {
                    slab.push(field(&point(i, j, k)));
                }
            }
            slab
        })
        .collect();
    marching_cubes_values(&values, lo, hi, res)
}

fn grid_step(lo: &[f64; 3], hi: &[f64; 3], res: &[usize; 3]) -> [f64; 3] {
    assert!(res.iter().all(|&r| r >= 8), "resolution >= 8 per axis");
    [
        (hi[0] - lo[0]) / res[0] as f64,
        (hi[1] - lo[1]) / res[1] as f64,
        (hi[2] - lo[2]) / res[2] as f64,
    ]
}

/// The grid corner positions marching cubes samples, in value-buffer order
/// (for batched field evaluation).
pub fn marching_grid_points(lo: [f64; 3], hi: [f64; 3], res: [usize; 3]) -> Vec<[f64; 3]> {
    let n = [res[0] + 1, res[1] + 1, res[2] + 1];
    let step = grid_step(&lo, &hi, &res);
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                out.push([
                    lo[0] + i as f64 * step[0],
                    lo[1] + j as f64 * step[1],
                    lo[2] + k as f64 * step[2],
                ]);
            }
        }
    }
    out
}

/// Marching cubes over precomputed corner values (see
/// [`marching_grid_points`] for the expected ordering).
pub fn marching_cubes_values(values: &[f64], lo: [f64; 3], hi: [f64; 3], res: [usize; 3]) -> TriMesh {
    let n = [res[0] + 1, res[1] + 1, res[2] + 1];
    assert_eq!(values.len(), n[0] * n[1] * n[2]);
    let step = grid_step(&lo, &hi, &res);
    let point = |i: usize, j: usize, k: usize| {
        [
            lo[0] + i as f64 * step[0],
            lo[1] + j as f64 * step[1],
            lo[2] + k as f64 * step[2],
        ]
    };
    let val = |i: usize, j: usize, k: usize| values[(i * n[1] + j) * n[2] + k];

    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // canonical grid-edge key: (corner point flat index, axis)
    let mut edge_vertex: HashMap<(usize, u8), usize> = HashMap::new();

    for i in 0..res[0] {
        for j in 0..res[1] {
            for k in 0..res[2] {
                let mut case = 0usize;
                for (c, (dx, dy, dz)) in CORNER_OFFSETS.iter().enumerate() {
                    if val(i + dx, j + dy, k + dz) < 0.0 {
                        case |= 1 << c;
                    }
                }
                let tris = TRI_TABLE[case];
                if tris.is_empty() {
                    continue;
                }
                let mut tri_ids = [0usize; 3];
                for (t, &edge) in tris.iter().enumerate() {
                    let (ca, cb) = EDGE_CORNERS[edge];
                    let (ax, ay, az) = CORNER_OFFSETS[ca];
                    let (bx, by, bz) = CORNER_OFFSETS[cb];
                    let ga = (i + ax, j + ay, k + az);
                    let gb = (i + bx, j + by, k + bz);
                    // canonical id: the lower corner and the axis of the edge
                    let (gmin, gmax) = if ga <= gb { (ga, gb) } else { (gb, ga) };
                    let axis = if gmax.0 > gmin.0 {
                        0u8
                    } else if gmax.1 > gmin.1 {
                        1
                    } else {
                        2
                    };
                    let flat = (gmin.0 * n[1] + gmin.1) * n[2] + gmin.2;
                    let vid = *edge_vertex.entry((flat, axis)).or_insert_with(|| {
                        let va = val(ga.0, ga.1, ga.2);
                        let vb = val(gb.0, gb.1, gb.2);
                        let tt = if (vb - va).abs() < 1e-15 {
                            0.5
                        } else {
                            (-va / (vb - va)).clamp(0.0, 1.0)
                        };
                        let pa = point(ga.0, ga.1, ga.2);
                        let pb = point(gb.0, gb.1, gb.2);
                        verts.push([
                            pa[0] + tt * (pb[0] - pa[0]),
                            pa[1] + tt * (pb[1] - pa[1]),
                            pa[2] + tt * (pb[2] - pa[2]),
                        ]);
                        verts.len() - 1
                    });
                    tri_ids[t % 3] = vid;
                    if t % 3 == 2 {
                        faces.push(tri_ids);
                    }
                }
            }
        }
    }

    let mut arr = Array2::<f64>::zeros((verts.len(), 3));
    for (i, v) in verts.iter().enumerate() {
        for d in 0..3 {
            arr[[i, d]] = v[d];
        }
    }
    TriMesh { verts: arr, faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_level_set_radius_within_cell_size() {
        let r = 0.5;
        let field = move |p: &[f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r;
        let mesh = marching_cubes(&field, [-1.0; 3], [1.0; 3], [64; 3]);
        assert!(!mesh.is_empty());
        let cell = 2.0 / 64.0;
        let mut sum = 0.0;
        for row in mesh.verts.rows() {
            let n = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            sum += (n - r).abs();
        }
        let mean = sum / mesh.verts.nrows() as f64;
        assert!(mean < cell, "mean radial error {mean} vs cell {cell}");
    }

    #[test]
    fn all_positive_field_gives_empty_mesh() {
        let field = |_: &[f64; 3]| 1.0;
        let mesh = marching_cubes(&field, [-1.0; 3], [1.0; 3], [8; 3]);
        assert!(mesh.is_empty());
        assert_eq!(mesh.verts.nrows(), 0);
    }

    #[test]
    fn plane_vertices_lie_on_the_plane() {
        // s(x) = x . n - d, exact for linear interpolation
        let n = [0.6, 0.48, 0.64]; // unit
        let d = 0.21;
        let field = move |p: &[f64; 3]| p[0] * n[0] + p[1] * n[1] + p[2] * n[2] - d;
        let mesh = marching_cubes(&field, [-1.0; 3], [1.0; 3], [16; 3]);
        assert!(!mesh.is_empty());
        let cell = 2.0 / 16.0;
        for row in mesh.verts.rows() {
            let dist = (row[0] * n[0] + row[1] * n[1] + row[2] * n[2] - d).abs();
            assert!(dist < cell * 1e-9, "vertex off plane by {dist}");
        }
    }

    #[test]
    fn extracted_sphere_is_watertight_and_oriented() {
        let field = |p: &[f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.6;
        let mesh = marching_cubes(&field, [-1.0; 3], [1.0; 3], [24; 3]);
        let mut undirected: std::collections::HashMap<(usize, usize), usize> = Default::default();
        let mut directed: std::collections::HashMap<(usize, usize), usize> = Default::default();
        for f in &mesh.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        assert!(undirected.values().all(|&c| c == 2), "watertight");
        assert!(directed.values().all(|&c| c == 1), "consistent orientation");
        let euler = mesh.verts.nrows() as i64 - undirected.len() as i64 + mesh.faces.len() as i64;
        assert_eq!(euler, 2);
    }
}
