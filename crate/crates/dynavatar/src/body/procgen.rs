//! Procedurally generated bodies and reference meshes.
//!
//! The default body is a closed vertical tube with a person-ish radius
//! profile: head, neck pinch, shoulders, hips. It is cut along one vertical
//! seam for the cylindrical UV unwrap (the two seam columns coincide in 3-d,
//! bit for bit) and capped by pole fans. Eight joints: root, spine, left and
//! right hip/knee, two shoulders.

use super::BodyModel;
use ndarray::Array2;

fn smooth01(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * (3.0 - 2.0 * t)
    }
}

fn gauss(y: f64, c: f64, s: f64) -> f64 {
    (-0.5 * ((y - c) / s).powi(2)).exp()
}

/// Person-ish radius profile over height y in [-0.8, 0.8].
pub fn radius_profile(y: f64) -> f64 {
    let mut r = 0.155;
    r += 0.075 * gauss(y, -0.12, 0.20); // hips
    r += 0.045 * gauss(y, 0.28, 0.14); // chest
    r += 0.055 * gauss(y, 0.46, 0.08); // shoulders
    r -= 0.065 * gauss(y, 0.58, 0.045); // neck pinch
    r += 0.045 * gauss(y, 0.70, 0.06); // head
    r *= 1.0 - 0.85 * smooth01((y.abs() - 0.72) / 0.08); // pinch the caps shut
    r.max(0.02)
}

pub const BODY_HALF_HEIGHT: f64 = 0.8;

/// Joint ids of the default skeleton.
pub mod joints {
    pub const ROOT: usize = 0;
    pub const SPINE: usize = 1;
    pub const HIP_L: usize = 2;
    pub const KNEE_L: usize = 3;
    pub const HIP_R: usize = 4;
    pub const KNEE_R: usize = 5;
    pub const SHOULDER_L: usize = 6;
    pub const SHOULDER_R: usize = 7;
    pub const COUNT: usize = 8;
}

/// Build the default miniature body: `rings x segments` tube plus two pole
/// caps; `rings >= 4`, `segments >= 6`.
///
/// The pole of each cap is split into one coincident copy per fan triangle
/// (own `u`, `v` = 0 or 1), which keeps the UV map locally strip-like at the
/// caps instead of collapsing a disc onto a point. Vertex count is
/// `rings * (segments + 1) + 2 * segments`.
pub fn default_body(rings: usize, segments: usize) -> BodyModel {
    assert!(rings >= 4 && segments >= 6);
    let (r_n, s_n) = (rings, segments);
    let v_count = r_n * (s_n + 1) + 2 * s_n;
    let mut verts = Array2::<f64>::zeros((v_count, 3));
    let mut uv = Array2::<f64>::zeros((v_count, 2));

    let y_lo = -BODY_HALF_HEIGHT + 0.02;
    let y_hi = BODY_HALF_HEIGHT - 0.02;
    // caps get a v-band of their own so texel density roughly follows
    // surface area there
    let v_cap = 0.05;
    let idx = |i: usize, j: usize| i * (s_n + 1) + j;
    for i in 0..r_n {
        let y = y_lo + (y_hi - y_lo) * i as f64 / (r_n - 1) as f64;
        let r = radius_profile(y);
        for j in 0..=s_n {
            let k = idx(i, j);
            if j == s_n {
                // seam duplicate: copy column 0 bits, new u
                verts[[k, 0]] = verts[[idx(i, 0), 0]];
                verts[[k, 1]] = verts[[idx(i, 0), 1]];
                verts[[k, 2]] = verts[[idx(i, 0), 2]];
            } else {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / s_n as f64;
                verts[[k, 0]] = r * theta.cos();
                verts[[k, 1]] = y;
                verts[[k, 2]] = r * theta.sin();
            }
            uv[[k, 0]] = j as f64 / s_n as f64;
            uv[[k, 1]] = v_cap + (1.0 - 2.0 * v_cap) * (y - y_lo) / (y_hi - y_lo);
        }
    }
    let pole_bot = |j: usize| r_n * (s_n + 1) + j;
    let pole_top = |j: usize| r_n * (s_n + 1) + s_n + j;
    for j in 0..s_n {
        let u_mid = (j as f64 + 0.5) / s_n as f64;
        verts[[pole_bot(j), 1]] = -BODY_HALF_HEIGHT;
        uv[[pole_bot(j), 0]] = u_mid;
        uv[[pole_bot(j), 1]] = 0.0;
        verts[[pole_top(j), 1]] = BODY_HALF_HEIGHT;
        uv[[pole_top(j), 0]] = u_mid;
        uv[[pole_top(j), 1]] = 1.0;
    }

    let mut faces: Vec<[usize; 3]> = Vec::new();
    for i in 0..r_n - 1 {
        for j in 0..s_n {
            let a = idx(i, j);
            let b = idx(i, j + 1);
            let c = idx(i + 1, j + 1);
            let d = idx(i + 1, j);
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    for j in 0..s_n {
        faces.push([pole_bot(j), idx(0, j), idx(0, j + 1)]);
        faces.push([pole_top(j), idx(r_n - 1, j + 1), idx(r_n - 1, j)]);
    }

    let joint_rest = ndarray::arr2(&[
        [0.0, 0.0, 0.0],    // root
        [0.0, 0.25, 0.0],   // spine
        [-0.10, -0.05, 0.0], // hip L
        [-0.10, -0.45, 0.0], // knee L
        [0.10, -0.05, 0.0],  // hip R
        [0.10, -0.45, 0.0],  // knee R
        [-0.22, 0.42, 0.0],  // shoulder L
        [0.22, 0.42, 0.0],   // shoulder R
    ]);
    let parent_index = vec![
        None,
        Some(joints::ROOT),
        Some(joints::ROOT),
        Some(joints::HIP_L),
        Some(joints::ROOT),
        Some(joints::HIP_R),
        Some(joints::SPINE),
        Some(joints::SPINE),
    ];

    let mut weights = Array2::<f64>::zeros((v_count, joints::COUNT));
    for vi in 0..v_count {
        let x = verts[[vi, 0]];
        let y = verts[[vi, 1]];
        // nested gates partition the height; lateral sigmoid splits L/R
        let a = smooth01((y + 0.40) / 0.22);
        let b = smooth01((y + 0.04) / 0.20);
        let c = smooth01((y - 0.20) / 0.18);
        let d = smooth01((y - 0.40) / 0.14);
        let m_knee = 1.0 - a;
        let m_hip = a * (1.0 - b);
        let m_root = a * b * (1.0 - c);
        let m_spine = a * b * c * (1.0 - d);
        let m_up = a * b * c * d;
        let side = smooth01((x + 0.06) / 0.12); // 0 left, 1 right
        let lat = smooth01((x.abs() - 0.04) / 0.16);
        let mut w = [0.0; joints::COUNT];
        w[joints::KNEE_L] = m_knee * (1.0 - side);
        w[joints::KNEE_R] = m_knee * side;
        w[joints::HIP_L] = m_hip * (1.0 - side);
        w[joints::HIP_R] = m_hip * side;
        w[joints::ROOT] = m_root;
        w[joints::SPINE] = m_spine + m_up * (1.0 - lat);
        w[joints::SHOULDER_L] = m_up * lat * (1.0 - side);
        w[joints::SHOULDER_R] = m_up * lat * side;
        let sum: f64 = w.iter().sum();
        for (k, &v) in w.iter().enumerate() {
            weights[[vi, k]] = v / sum;
        }
    }

    BodyModel {
        template_vertices: verts,
        faces,
        joint_rest_positions: joint_rest,
        parent_index,
        skin_weights: weights,
        uv_coords: uv,
    }
}

/// Unit icosphere by repeated 4-way subdivision of an icosahedron with
/// midpoints re-projected to the sphere. Returns (vertices, faces).
pub fn icosphere(subdivs: usize) -> (Array2<f64>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in verts.iter_mut() {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        for d in 0..3 {
            v[d] /= n;
        }
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivs {
        let mut mid: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[e] = *mid.entry(key).or_insert_with(|| {
                    let p = [
                        (verts[a][0] + verts[b][0]) * 0.5,
                        (verts[a][1] + verts[b][1]) * 0.5,
                        (verts[a][2] + verts[b][2]) * 0.5,
                    ];
                    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    verts.push([p[0] / n, p[1] / n, p[2] / n]);
                    verts.len() - 1
                });
            }
            new_faces.push([f[0], m[0], m[2]]);
            new_faces.push([f[1], m[1], m[0]]);
            new_faces.push([f[2], m[2], m[1]]);
            new_faces.push([m[0], m[1], m[2]]);
        }
        faces = new_faces;
    }
    let mut arr = Array2::<f64>::zeros((verts.len(), 3));
    for (i, v) in verts.iter().enumerate() {
        for d in 0..3 {
            arr[[i, d]] = v[d];
        }
    }
    (arr, faces)
}

/// Closed lat-long sphere: `rings * segments + 2` vertices, `2 * rings *
/// segments` faces. With rings=82, segments=84 this reproduces the 6,890 /
/// 13,776 reference mesh whose one-step subdivision has 27,554 vertices.
pub fn uv_sphere(rings: usize, segments: usize) -> (Array2<f64>, Vec<[usize; 3]>) {
    assert!(rings >= 2 && segments >= 3);
    let v_count = rings * segments + 2;
    let mut verts = Array2::<f64>::zeros((v_count, 3));
    let idx = |i: usize, j: usize| i * segments + (j % segments);
    for i in 0..rings {
        let phi = std::f64::consts::PI * (i + 1) as f64 / (rings + 1) as f64;
        for j in 0..segments {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            let k = idx(i, j);
            verts[[k, 0]] = phi.sin() * theta.cos();
            verts[[k, 1]] = phi.cos();
            verts[[k, 2]] = phi.sin() * theta.sin();
        }
    }
    let top = rings * segments;
    let bot = top + 1;
    verts[[top, 1]] = 1.0;
    verts[[bot, 1]] = -1.0;
    let mut faces = Vec::with_capacity(2 * rings * segments);
    for j in 0..segments {
        faces.push([top, idx(0, j + 1), idx(0, j)]);
        faces.push([bot, idx(rings - 1, j), idx(rings - 1, j + 1)]);
    }
    for i in 0..rings - 1 {
        for j in 0..segments {
            let a = idx(i, j);
            let b = idx(i, j + 1);
            let c = idx(i + 1, j + 1);
            let d = idx(i + 1, j);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    (verts, faces)
}

/// Regular tetrahedron (V=4, E=6, F=4).
pub fn tetrahedron() -> (Array2<f64>, Vec<[usize; 3]>) {
    let verts = ndarray::arr2(&[
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]);
    let faces = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    (verts, faces)
}

/// Wrap a bare mesh as a single-joint body (weights all on the root, UV
/// coords collapsed). For connectivity-level operations only; does not pass
/// atlas validation.
pub fn mesh_only_body(verts: Array2<f64>, faces: Vec<[usize; 3]>) -> BodyModel {
    let v = verts.nrows();
    BodyModel {
        template_vertices: verts,
        faces,
        joint_rest_positions: ndarray::arr2(&[[0.0, 0.0, 0.0]]),
        parent_index: vec![None],
        skin_weights: Array2::ones((v, 1)),
        uv_coords: Array2::from_elem((v, 2), 0.5),
    }
}

/// Single root joint at the origin over a tetrahedron (rigid-motion tests).
pub fn single_joint_test_body() -> BodyModel {
    let (verts, faces) = tetrahedron();
    mesh_only_body(verts, faces)
}

pub const TWO_JOINT_TIP_VERTEX: usize = 4;

/// Root at origin, child joint at (0,1,0), plus a tip vertex at (0,2,0)
/// bound entirely to the child.
pub fn two_joint_chain_test_body() -> BodyModel {
    let (verts, faces) = tetrahedron();
    let mut v = Array2::<f64>::zeros((5, 3));
    v.slice_mut(ndarray::s![0..4, ..]).assign(&(&verts * 0.2));
    v[[4, 1]] = 2.0;
    let mut weights = Array2::<f64>::zeros((5, 2));
    for i in 0..4 {
        weights[[i, 0]] = 1.0;
    }
    weights[[4, 1]] = 1.0;
    BodyModel {
        template_vertices: v,
        faces,
        joint_rest_positions: ndarray::arr2(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        parent_index: vec![None, Some(0)],
        skin_weights: weights,
        uv_coords: Array2::from_elem((5, 2), 0.5),
    }
}
