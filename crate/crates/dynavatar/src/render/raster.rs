//! Soft (differentiable) and hard triangle rasterization.
//!
//! Soft coverage per face is `sigmoid(d / sigma)` of the signed 2-d
//! pixel-to-triangle distance `d` (positive inside, pixels), aggregated over
//! faces as `S = 1 - prod(1 - alpha_f)`. Shaded attributes (features,
//! normals, depth) come from the nearest covering face by barycentric
//! interpolation. One forward pass caches enough per-pixel state for exact
//! hand-derived backward passes to vertices and features.

use crate::body::CameraModel;
use crate::tape::Tensor;
use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, ArrayD, ArrayView2};
use std::rc::Rc;

#[derive(Debug, Clone)]
pub struct RasterConfig {
    /// Soft coverage width in pixels. The conventional default is
    /// 1e-4 x image diagonal (equivalently 1e-4 x the NDC diagonal scale).
    pub sigma_px: f64,
    /// Faces with any vertex at or behind this camera depth are dropped.
    pub znear: f64,
}

impl RasterConfig {
    pub fn for_camera(camera: &CameraModel, sigma_factor: f64) -> RasterConfig {
        let diag = ((camera.width * camera.width + camera.height * camera.height) as f64).sqrt();
        RasterConfig {
            sigma_px: sigma_factor * diag,
            znear: 1e-3,
        }
    }
}

/// Differentiable raster outputs (tape tensors).
pub struct RasterOutput {
    /// `[H, W]` soft silhouette in [0, 1].
    pub silhouette: Tensor,
    /// `[C, H, W]` interpolated per-vertex features, 0 where uncovered.
    pub features: Tensor,
    /// `[3, H, W]` camera-frame unit face normals (z <= 0), 0 where uncovered.
    pub normals: Tensor,
    /// `[H, W]` camera depth, 0 where uncovered.
    pub depth: Tensor,
}

/// Plain raster outputs (ground-truth synthesis path).
pub struct HardRaster {
    pub mask: Array2<f64>,
    pub features: Array3<f64>,
    pub normals: Array3<f64>,
    pub depth: Array2<f64>,
}

#[derive(Clone, Copy)]
struct CoverEntry {
    face: u32,
    alpha: f64,
    d: f64,
}

#[derive(Clone, Copy)]
struct VisEntry {
    face: u32,
    w: [f64; 3],
    z: f64,
}

struct FaceGeom {
    /// camera-frame unit normal, flipped toward the camera
    n_cam: [f64; 3],
    /// unnormalized world cross product (b-a) x (c-a)
    u_world: [f64; 3],
    flip: f64,
    valid: bool,
}

struct RasterCache {
    width: usize,
    height: usize,
    sigma: f64,
    faces: Vec<[usize; 3]>,
    rot: Matrix3<f64>,
    world: Vec<[f64; 3]>,
    proj: Vec<[f64; 2]>,
    zs: Vec<f64>,
    vvalid: Vec<bool>,
    /// per-vertex d(x_px,y_px)/d(world) rows
    jac: Vec<[[f64; 3]; 2]>,
    covers: Vec<Vec<CoverEntry>>,
    visible: Vec<Option<VisEntry>>,
    fgeom: Vec<FaceGeom>,
}

fn build_cache(
    verts: &ArrayView2<'_, f64>,
    faces: &[[usize; 3]],
    camera: &CameraModel,
    cfg: &RasterConfig,
) -> RasterCache {
    let v_count = verts.nrows();
    let (w_img, h_img) = (camera.width, camera.height);
    let rot = camera.rot();
    let trans = camera.trans();
    let (fx, fy) = (camera.focal[0], camera.focal[1]);
    let (cx, cy) = (camera.principal_point[0], camera.principal_point[1]);

    let mut world = vec![[0.0; 3]; v_count];
    let mut proj = vec![[0.0; 2]; v_count];
    let mut zs = vec![0.0; v_count];
    let mut vvalid = vec![false; v_count];
    let mut jac = vec![[[0.0; 3]; 2]; v_count];
    for i in 0..v_count {
        let p = Vector3::new(verts[[i, 0]], verts[[i, 1]], verts[[i, 2]]);
        world[i] = [p[0], p[1], p[2]];
        let c = rot * p + trans;
        zs[i] = c[2];
        if c[2] <= cfg.znear {
            continue;
        }
        vvalid[i] = true;
        proj[i] = [fx * c[0] / c[2] + cx, fy * c[1] / c[2] + cy];
        // d(px)/d(cam) rows, then chain through the rotation
        let dx_dc = [fx / c[2], 0.0, -fx * c[0] / (c[2] * c[2])];
        let dy_dc = [0.0, fy / c[2], -fy * c[1] / (c[2] * c[2])];
        for d in 0..3 {
            jac[i][0][d] = dx_dc[0] * rot[(0, d)] + dx_dc[1] * rot[(1, d)] + dx_dc[2] * rot[(2, d)];
            jac[i][1][d] = dy_dc[0] * rot[(0, d)] + dy_dc[1] * rot[(1, d)] + dy_dc[2] * rot[(2, d)];
        }
    }

    let mut fgeom = Vec::with_capacity(faces.len());
    for f in faces {
        let a = Vector3::new(verts[[f[0], 0]], verts[[f[0], 1]], verts[[f[0], 2]]);
        let b = Vector3::new(verts[[f[1], 0]], verts[[f[1], 1]], verts[[f[1], 2]]);
        let c = Vector3::new(verts[[f[2], 0]], verts[[f[2], 1]], verts[[f[2], 2]]);
        let u = (b - a).cross(&(c - a));
        let norm = u.norm();
        let valid = vvalid[f[0]] && vvalid[f[1]] && vvalid[f[2]] && norm > 1e-14;
        if !valid {
            fgeom.push(FaceGeom {
                n_cam: [0.0; 3],
                u_world: [0.0; 3],
                flip: 1.0,
                valid: false,
            });
            continue;
        }
        let n_world = u / norm;
        let n_c = rot * n_world;
        let flip = if n_c[2] > 0.0 { -1.0 } else { 1.0 };
        let n_c = n_c * flip;
        fgeom.push(FaceGeom {
            n_cam: [n_c[0], n_c[1], n_c[2]],
            u_world: [u[0], u[1], u[2]],
            flip,
            valid: true,
        });
    }

    let margin = 20.0 * cfg.sigma_px + 1.0;
    let mut covers: Vec<Vec<CoverEntry>> = vec![Vec::new(); w_img * h_img];
    let mut visible: Vec<Option<VisEntry>> = vec![None; w_img * h_img];

    for (fi, f) in faces.iter().enumerate() {
        if !fgeom[fi].valid {
            continue;
        }
        let tri = [proj[f[0]], proj[f[1]], proj[f[2]]];
        let area = signed_area(&tri);
        if area.abs() < 1e-12 {
            continue; // degenerate projection contributes nothing
        }
        let lo_x = tri.iter().map(|p| p[0]).fold(f64::MAX, f64::min) - margin;
        let hi_x = tri.iter().map(|p| p[0]).fold(f64::MIN, f64::max) + margin;
        let lo_y = tri.iter().map(|p| p[1]).fold(f64::MAX, f64::min) - margin;
        let hi_y = tri.iter().map(|p| p[1]).fold(f64::MIN, f64::max) + margin;
        let x0 = (lo_x - 0.5).floor().max(0.0) as usize;
        let x1 = ((hi_x - 0.5).ceil().min((w_img - 1) as f64)).max(0.0) as usize;
        let y0 = (lo_y - 0.5).floor().max(0.0) as usize;
        let y1 = ((hi_y - 0.5).ceil().min((h_img - 1) as f64)).max(0.0) as usize;
        if lo_x >= w_img as f64 || hi_x < 0.0 || lo_y >= h_img as f64 || hi_y < 0.0 {
            continue;
        }
        for py in y0..=y1 {
            for px in x0..=x1 {
                let pix = [px as f64 + 0.5, py as f64 + 0.5];
                let d = signed_distance(&tri, &pix);
                if d < -margin {
                    continue;
                }
                let alpha = crate::tape::sigmoid_f(d / cfg.sigma_px);
                let idx = py * w_img + px;
                covers[idx].push(CoverEntry {
                    face: fi as u32,
                    alpha,
                    d,
                });
                if d > 0.0 {
                    let wbar = barycentric(&tri, &pix, area);
                    let z = wbar[0] * zs[f[0]] + wbar[1] * zs[f[1]] + wbar[2] * zs[f[2]];
                    let replace = match &visible[idx] {
                        None => true,
                        Some(v) => z < v.z,
                    };
                    if replace {
                        visible[idx] = Some(VisEntry {
                            face: fi as u32,
                            w: wbar,
                            z,
                        });
                    }
                }
            }
        }
    }

    RasterCache {
        width: w_img,
        height: h_img,
        sigma: cfg.sigma_px,
        faces: faces.to_vec(),
        rot,
        world,
        proj,
        zs,
        vvalid,
        jac,
        covers,
        visible,
        fgeom,
    }
}

/// Differentiable soft rasterization of `verts [V,3]` with per-vertex
/// `feats [V,C]`.
pub fn rasterize_soft(
    verts: &Tensor,
    feats: &Tensor,
    faces: &[[usize; 3]],
    camera: &CameraModel,
    cfg: &RasterConfig,
) -> RasterOutput {
    let cache = {
        let vd = verts.data();
        let v2 = vd.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        Rc::new(build_cache(&v2, faces, camera, cfg))
    };
    let (h, w) = (cache.height, cache.width);
    let c_dim = feats.shape()[1];

    // --- silhouette ---
    let mut sil = Array2::<f64>::zeros((h, w));
    for (idx, entries) in cache.covers.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let prod: f64 = entries.iter().map(|e| 1.0 - e.alpha).product();
        sil[[idx / w, idx % w]] = 1.0 - prod;
    }
    let silhouette = {
        let cache = cache.clone();
        Tensor::from_op(
            sil.into_dyn(),
            vec![verts.clone()],
            Box::new(move |_, g| vec![Some(backward_silhouette(&cache, g))]),
        )
    };

    // --- features (and the shared visible-face interpolation backward) ---
    let feats_data = {
        let fd = feats.data();
        fd.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned()
    };
    let mut img = Array3::<f64>::zeros((c_dim, h, w));
    for (idx, vis) in cache.visible.iter().enumerate() {
        if let Some(v) = vis {
            let f = cache.faces[v.face as usize];
            for ch in 0..c_dim {
                img[[ch, idx / w, idx % w]] = v.w[0] * feats_data[[f[0], ch]]
                    + v.w[1] * feats_data[[f[1], ch]]
                    + v.w[2] * feats_data[[f[2], ch]];
            }
        }
    }
    let features = {
        let cache = cache.clone();
        Tensor::from_op(
            img.into_dyn(),
            vec![verts.clone(), feats.clone()],
            Box::new(move |node, g| {
                let fd = node.parents[1].data();
                let f2 = fd.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let (gv, gf) = backward_features(&cache, g, &f2);
                vec![Some(gv), Some(gf)]
            }),
        )
    };

    // --- normals ---
    let mut nimg = Array3::<f64>::zeros((3, h, w));
    for (idx, vis) in cache.visible.iter().enumerate() {
        if let Some(v) = vis {
            let n = &cache.fgeom[v.face as usize].n_cam;
            for d in 0..3 {
                nimg[[d, idx / w, idx % w]] = n[d];
            }
        }
    }
    let normals = {
        let cache = cache.clone();
        Tensor::from_op(
            nimg.into_dyn(),
            vec![verts.clone()],
            Box::new(move |_, g| vec![Some(backward_normals(&cache, g))]),
        )
    };

    // --- depth ---
    let mut dimg = Array2::<f64>::zeros((h, w));
    for (idx, vis) in cache.visible.iter().enumerate() {
        if let Some(v) = vis {
            dimg[[idx / w, idx % w]] = v.z;
        }
    }
    let depth = {
        let cache = cache.clone();
        Tensor::from_op(
            dimg.into_dyn(),
            vec![verts.clone()],
            Box::new(move |_, g| vec![Some(backward_depth(&cache, g))]),
        )
    };

    RasterOutput {
        silhouette,
        features,
        normals,
        depth,
    }
}

/// Hard rasterization used for ground-truth synthesis: binary coverage at
/// pixel centers, nearest-face attributes.
pub fn rasterize_hard(
    verts: &ArrayView2<'_, f64>,
    feats: &ArrayView2<'_, f64>,
    faces: &[[usize; 3]],
    camera: &CameraModel,
) -> HardRaster {
    let cfg = RasterConfig {
        sigma_px: 1e-6, // margin only; coverage below is d > 0
        znear: 1e-3,
    };
    let cache = build_cache(verts, faces, camera, &cfg);
    let (h, w) = (cache.height, cache.width);
    let c_dim = feats.ncols();
    let mut mask = Array2::<f64>::zeros((h, w));
    let mut img = Array3::<f64>::zeros((c_dim, h, w));
    let mut nimg = Array3::<f64>::zeros((3, h, w));
    let mut dimg = Array2::<f64>::zeros((h, w));
    for (idx, vis) in cache.visible.iter().enumerate() {
        if let Some(v) = vis {
            let (i, j) = (idx / w, idx % w);
            mask[[i, j]] = 1.0;
            let f = cache.faces[v.face as usize];
            for ch in 0..c_dim {
                img[[ch, i, j]] =
                    v.w[0] * feats[[f[0], ch]] + v.w[1] * feats[[f[1], ch]] + v.w[2] * feats[[f[2], ch]];
            }
            let n = &cache.fgeom[v.face as usize].n_cam;
            for d in 0..3 {
                nimg[[d, i, j]] = n[d];
            }
            dimg[[i, j]] = v.z;
        }
    }
    HardRaster {
        mask,
        features: img,
        normals: nimg,
        depth: dimg,
    }
}

// ---------- geometry helpers ----------

fn signed_area(t: &[[f64; 2]; 3]) -> f64 {
    (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])
}

fn barycentric(t: &[[f64; 2]; 3], p: &[f64; 2], area: f64) -> [f64; 3] {
    let c0 = cross2(sub2(t[1], *p), sub2(t[2], *p));
    let c1 = cross2(sub2(t[2], *p), sub2(t[0], *p));
    let c2 = cross2(sub2(t[0], *p), sub2(t[1], *p));
    [c0 / area, c1 / area, c2 / area]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn inside(t: &[[f64; 2]; 3], p: &[f64; 2]) -> bool {
    let area = signed_area(t);
    let w = barycentric(t, p, area);
    w[0] >= 0.0 && w[1] >= 0.0 && w[2] >= 0.0
}

/// Signed distance from pixel `p` to triangle `t` (pixels; positive inside).
fn signed_distance(t: &[[f64; 2]; 3], p: &[f64; 2]) -> f64 {
    let mut best = f64::MAX;
    for e in 0..3 {
        let a = t[e];
        let b = t[(e + 1) % 3];
        let eab = sub2(b, a);
        let len2 = eab[0] * eab[0] + eab[1] * eab[1];
        let tt = if len2 > 0.0 {
            ((p[0] - a[0]) * eab[0] + (p[1] - a[1]) * eab[1]) / len2
        } else {
            0.0
        }
        .clamp(0.0, 1.0);
        let q = [a[0] + tt * eab[0], a[1] + tt * eab[1]];
        let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        best = best.min(dist);
    }
    if inside(t, p) {
        best
    } else {
        -best
    }
}

/// d(signed distance)/d(triangle vertices), evaluated with the same
/// classification (nearest edge, foot parameter) as the forward pass.
fn signed_distance_grad(t: &[[f64; 2]; 3], p: &[f64; 2]) -> [[f64; 2]; 3] {
    let mut best = f64::MAX;
    let mut best_e = 0;
    let mut best_t = 0.0;
    for e in 0..3 {
        let a = t[e];
        let b = t[(e + 1) % 3];
        let eab = sub2(b, a);
        let len2 = eab[0] * eab[0] + eab[1] * eab[1];
        let tt = if len2 > 0.0 {
            ((p[0] - a[0]) * eab[0] + (p[1] - a[1]) * eab[1]) / len2
        } else {
            0.0
        }
        .clamp(0.0, 1.0);
        let q = [a[0] + tt * eab[0], a[1] + tt * eab[1]];
        let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if dist < best {
            best = dist;
            best_e = e;
            best_t = tt;
        }
    }
    let sign = if inside(t, p) { 1.0 } else { -1.0 };
    let mut grads = [[0.0; 2]; 3];
    if best < 1e-12 {
        return grads; // on the boundary; subgradient 0
    }
    let ia = best_e;
    let ib = (best_e + 1) % 3;
    let a = t[ia];
    let b = t[ib];
    let q = [
        a[0] + best_t * (b[0] - a[0]),
        a[1] + best_t * (b[1] - a[1]),
    ];
    let m = [(p[0] - q[0]) / best, (p[1] - q[1]) / best];
    // dist = |p - q(a,b)| with q = a + t*(b-a) and dq/da = (1-t)I + (b-a) dt/da.
    // At an interior foot (0<t<1) the (b-a) dt/d* terms are tangential and
    // vanish against m, so d dist/da = -(1-t) m, d dist/db = -t m. At a
    // clamped foot (t in {0,1}) q equals a vertex and the same formula holds.
    grads[ia][0] = -sign * (1.0 - best_t) * m[0];
    grads[ia][1] = -sign * (1.0 - best_t) * m[1];
    grads[ib][0] = -sign * best_t * m[0];
    grads[ib][1] = -sign * best_t * m[1];
    grads
}

/// d(barycentric)/d(triangle vertices): dw[i][j] = dw_i / d p_j (2-vector).
fn barycentric_grads(t: &[[f64; 2]; 3], p: &[f64; 2]) -> ([f64; 3], [[[f64; 2]; 3]; 3]) {
    let area = signed_area(t);
    let c = [
        cross2(sub2(t[1], *p), sub2(t[2], *p)),
        cross2(sub2(t[2], *p), sub2(t[0], *p)),
        cross2(sub2(t[0], *p), sub2(t[1], *p)),
    ];
    let w = [c[0] / area, c[1] / area, c[2] / area];
    // dC_i/dp_j: C_i = cross(t[i+1]-p, t[i+2]-p), indices mod 3.
    let mut dc = [[[0.0; 2]; 3]; 3];
    for i in 0..3 {
        let j1 = (i + 1) % 3;
        let j2 = (i + 2) % 3;
        let v1 = sub2(t[j1], *p);
        let v2 = sub2(t[j2], *p);
        // d cross(u,v)/du = (v.y, -v.x); /dv = (-u.y, u.x)
        dc[i][j1] = [v2[1], -v2[0]];
        dc[i][j2] = [-v1[1], v1[0]];
    }
    // dA/dp_j for A = cross(t1-t0, t2-t0)
    let e1 = sub2(t[1], t[0]);
    let e2 = sub2(t[2], t[0]);
    let da = [
        [e1[1] - e2[1], e2[0] - e1[0]],
        [e2[1], -e2[0]],
        [-e1[1], e1[0]],
    ];
    let mut dw = [[[0.0; 2]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for d in 0..2 {
                dw[i][j][d] = (dc[i][j][d] * area - c[i] * da[j][d]) / (area * area);
            }
        }
    }
    (w, dw)
}

// ---------- backward passes ----------

fn accumulate_via_jacobian(gv: &mut Array2<f64>, cache: &RasterCache, vi: usize, g2d: [f64; 2]) {
    for d in 0..3 {
        gv[[vi, d]] += g2d[0] * cache.jac[vi][0][d] + g2d[1] * cache.jac[vi][1][d];
    }
}

fn backward_silhouette(cache: &RasterCache, g: &ArrayD<f64>) -> ArrayD<f64> {
    let w = cache.width;
    let mut gv = Array2::<f64>::zeros((cache.proj.len(), 3));
    for (idx, entries) in cache.covers.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let go = g[[idx / w, idx % w]];
        if go == 0.0 {
            continue;
        }
        let pix = [(idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5];
        // leave-one-out products of (1 - alpha), exact under saturation
        let zeros = entries.iter().filter(|e| e.alpha == 1.0).count();
        let prod_nonzero: f64 = entries
            .iter()
            .filter(|e| e.alpha != 1.0)
            .map(|e| 1.0 - e.alpha)
            .product();
        for e in entries {
            let loo = match zeros {
                0 => prod_nonzero / (1.0 - e.alpha),
                1 if e.alpha == 1.0 => prod_nonzero,
                _ => 0.0,
            };
            let dalpha = e.alpha * (1.0 - e.alpha) / cache.sigma;
            let coef = go * loo * dalpha;
            if coef == 0.0 {
                continue;
            }
            let f = cache.faces[e.face as usize];
            let tri = [cache.proj[f[0]], cache.proj[f[1]], cache.proj[f[2]]];
            let dgrad = signed_distance_grad(&tri, &pix);
            for k in 0..3 {
                accumulate_via_jacobian(
                    &mut gv,
                    cache,
                    f[k],
                    [coef * dgrad[k][0], coef * dgrad[k][1]],
                );
            }
        }
    }
    gv.into_dyn()
}

fn backward_features(
    cache: &RasterCache,
    g: &ArrayD<f64>,
    feats: &ArrayView2<'_, f64>,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let w = cache.width;
    let c_dim = feats.ncols();
    let mut gv = Array2::<f64>::zeros((cache.proj.len(), 3));
    let mut gf = Array2::<f64>::zeros((feats.nrows(), c_dim));
    for (idx, vis) in cache.visible.iter().enumerate() {
        let Some(v) = vis else { continue };
        let (i, j) = (idx / w, idx % w);
        let f = cache.faces[v.face as usize];
        // gradient to features: barycentric weights
        let mut any = false;
        for ch in 0..c_dim {
            let go = g[[ch, i, j]];
            if go != 0.0 {
                any = true;
                for k in 0..3 {
                    gf[[f[k], ch]] += go * v.w[k];
                }
            }
        }
        if !any {
            continue;
        }
        // gradient to vertices through the barycentric weights
        let pix = [j as f64 + 0.5, i as f64 + 0.5];
        let tri = [cache.proj[f[0]], cache.proj[f[1]], cache.proj[f[2]]];
        let (_, dw) = barycentric_grads(&tri, &pix);
        for k in 0..3 {
            // sum over channels of g * feat_k
            let mut coef = 0.0;
            for ch in 0..c_dim {
                coef += g[[ch, i, j]] * feats[[f[k], ch]];
            }
            if coef == 0.0 {
                continue;
            }
            for vtx in 0..3 {
                accumulate_via_jacobian(
                    &mut gv,
                    cache,
                    f[vtx],
                    [coef * dw[k][vtx][0], coef * dw[k][vtx][1]],
                );
            }
        }
    }
    (gv.into_dyn(), gf.into_dyn())
}

fn backward_normals(cache: &RasterCache, g: &ArrayD<f64>) -> ArrayD<f64> {
    let w = cache.width;
    let mut gv = Array2::<f64>::zeros((cache.proj.len(), 3));
    for (idx, vis) in cache.visible.iter().enumerate() {
        let Some(v) = vis else { continue };
        let (i, j) = (idx / w, idx % w);
        let go = [g[[0, i, j]], g[[1, i, j]], g[[2, i, j]]];
        if go == [0.0, 0.0, 0.0] {
            continue;
        }
        let fg = &cache.fgeom[v.face as usize];
        let f = cache.faces[v.face as usize];
        let u = Vector3::new(fg.u_world[0], fg.u_world[1], fg.u_world[2]);
        let un = u.norm();
        if un < 1e-14 {
            continue;
        }
        let m = u / un;
        // n_cam = flip * R * m; pull the output gradient back to u
        let g_vec = Vector3::new(go[0], go[1], go[2]);
        let g_m = cache.rot.transpose() * g_vec * fg.flip;
        let g_u = (g_m - m * m.dot(&g_m)) / un;
        // u = (b-a) x (c-a); vector-Jacobian products:
        // g_a = (b-c) x g_u, g_b = (c-a) x g_u, g_c = (a-b) x g_u
        let a = vert3(cache, f[0]);
        let b = vert3(cache, f[1]);
        let c = vert3(cache, f[2]);
        let ga = (b - c).cross(&g_u);
        let gb = (c - a).cross(&g_u);
        let gc = (a - b).cross(&g_u);
        for (vi, gg) in [(f[0], ga), (f[1], gb), (f[2], gc)] {
            for d in 0..3 {
                gv[[vi, d]] += gg[d];
            }
        }
    }
    gv.into_dyn()
}

fn backward_depth(cache: &RasterCache, g: &ArrayD<f64>) -> ArrayD<f64> {
    let w = cache.width;
    let mut gv = Array2::<f64>::zeros((cache.proj.len(), 3));
    for (idx, vis) in cache.visible.iter().enumerate() {
        let Some(v) = vis else { continue };
        let (i, j) = (idx / w, idx % w);
        let go = g[[i, j]];
        if go == 0.0 {
            continue;
        }
        let f = cache.faces[v.face as usize];
        let pix = [j as f64 + 0.5, i as f64 + 0.5];
        let tri = [cache.proj[f[0]], cache.proj[f[1]], cache.proj[f[2]]];
        let (_, dw) = barycentric_grads(&tri, &pix);
        // z_pix = sum_k w_k z_k: through weights (2d) and through z_k itself
        for k in 0..3 {
            let coef = go * cache.zs[f[k]];
            for vtx in 0..3 {
                accumulate_via_jacobian(
                    &mut gv,
                    cache,
                    f[vtx],
                    [coef * dw[k][vtx][0], coef * dw[k][vtx][1]],
                );
            }
            // dz/dv = third row of R
            for d in 0..3 {
                gv[[f[k], d]] += go * v.w[k] * cache.rot[(2, d)];
            }
        }
    }
    gv.into_dyn()
}

fn vert3(cache: &RasterCache, i: usize) -> Vector3<f64> {
    Vector3::new(cache.world[i][0], cache.world[i][1], cache.world[i][2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::procgen;
    use crate::tape::grad_check;
    use ndarray::arr2;

    fn test_camera(res: usize, focal: f64) -> CameraModel {
        CameraModel::look_at(
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            focal,
            res,
            res,
        )
    }

    /// Two well-separated triangles facing the camera; vertex coordinates
    /// chosen so no pixel center sits on an edge or a depth tie.
    fn two_triangle_scene() -> (Tensor, Tensor, Vec<[usize; 3]>) {
        let verts = arr2(&[
            [-0.471, -0.313, 0.021],
            [0.552, -0.337, -0.043],
            [0.036, 0.561, 0.013],
            [-0.143, -0.122, 0.702],
            [0.611, 0.152, 0.651],
            [0.072, 0.543, 0.713],
        ]);
        let feats = arr2(&[
            [0.9, 0.2],
            [0.1, 0.7],
            [0.4, 0.4],
            [0.8, 0.1],
            [0.3, 0.9],
            [0.6, 0.5],
        ]);
        (
            Tensor::leaf(verts.into_dyn()),
            Tensor::leaf(feats.into_dyn()),
            vec![[0, 1, 2], [3, 4, 5]],
        )
    }

    #[test]
    fn empty_mesh_renders_zero_silhouette() {
        let verts = Tensor::constant(ndarray::Array2::<f64>::zeros((0, 3)).into_dyn());
        let feats = Tensor::constant(ndarray::Array2::<f64>::zeros((0, 2)).into_dyn());
        let cam = test_camera(32, 40.0);
        let out = rasterize_soft(&verts, &feats, &[], &cam, &RasterConfig::for_camera(&cam, 1e-4));
        assert!(out.silhouette.data().iter().all(|&v| v == 0.0));
        assert!(out.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn icosphere_silhouette_area_matches_projection_oracle() {
        // r=0.3 at z=6 with long focal: the tangent-cone correction is ~0.25%
        // so the small-angle disc area pi (f r / z)^2 holds within 1.5%.
        let (v, f) = procgen::icosphere(4);
        let r = 0.3;
        let verts = Tensor::constant((v * r).into_dyn());
        let feats = Tensor::constant(ndarray::Array2::<f64>::ones((2562, 1)).into_dyn());
        let cam = CameraModel::look_at(
            Vector3::new(0.0, 0.0, 6.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            800.0,
            128,
            128,
        );
        let out = rasterize_soft(&verts, &feats, &f, &cam, &RasterConfig::for_camera(&cam, 1e-4));
        let area: f64 = out.silhouette.data().iter().map(|&s| if s > 0.5 { 1.0 } else { 0.0 }).sum();
        let expect = std::f64::consts::PI * (800.0 * r / 6.0).powi(2);
        let rel = (area - expect).abs() / expect;
        assert!(rel < 0.015, "area {area} vs {expect} (rel {rel:.4})");
    }

    #[test]
    fn front_triangle_wins_depth_ordering() {
        let (verts, feats, faces) = two_triangle_scene();
        let cam = test_camera(64, 80.0);
        let out = rasterize_soft(&verts, &feats, &faces, &cam, &RasterConfig::for_camera(&cam, 1e-4));
        // the center pixel is covered by both; triangle 0 (z~3) is in front
        // of triangle 1 (z~2.3 from camera at +3 looking -z ... camera z_cam
        // grows away from the eye, so triangle 1 (world z~0.7) is CLOSER.
        let center = out.features.data()[[0, 32, 32]];
        let feats_d = feats.data();
        // expect a blend of triangle-1 vertex features in channel 0 (rows 3..6)
        let min1 = feats_d[[3, 0]].min(feats_d[[4, 0]]).min(feats_d[[5, 0]]);
        let max1 = feats_d[[3, 0]].max(feats_d[[4, 0]]).max(feats_d[[5, 0]]);
        assert!(center >= min1 - 1e-9 && center <= max1 + 1e-9, "center {center}");
        let depth = out.depth.data()[[32, 32]];
        assert!((depth - (3.0 - 0.7)).abs() < 0.15, "depth {depth}");
    }

    #[test]
    fn zero_area_face_contributes_nothing() {
        let verts = Tensor::leaf(
            arr2(&[[-0.3, -0.3, 0.0], [0.4, -0.3, 0.0], [0.4, -0.3, 0.0]]).into_dyn(),
        );
        let feats = Tensor::leaf(arr2(&[[1.0], [1.0], [1.0]]).into_dyn());
        let cam = test_camera(32, 40.0);
        let out = rasterize_soft(&verts, &feats, &[[0, 1, 2]], &cam, &RasterConfig::for_camera(&cam, 1e-4));
        assert!(out.silhouette.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silhouette_converges_to_hard_coverage_as_sigma_shrinks() {
        let verts_arr = arr2(&[[-0.4, -0.35, 0.0], [0.5, -0.25, 0.0], [0.03, 0.5, 0.0]]);
        let feats = Tensor::constant(arr2(&[[1.0], [1.0], [1.0]]).into_dyn());
        let verts = Tensor::constant(verts_arr.clone().into_dyn());
        let cam = test_camera(48, 60.0);
        let hard = rasterize_hard(
            &verts_arr.view(),
            &ndarray::Array2::ones((3, 1)).view(),
            &[[0, 1, 2]],
            &cam,
        );
        let mut prev_err = f64::MAX;
        for sigma in [1e-1, 1e-2, 1e-3] {
            let cfg = RasterConfig {
                sigma_px: sigma * (2.0 * 48.0_f64 * 48.0).sqrt(),
                znear: 1e-3,
            };
            let out = rasterize_soft(&verts, &feats, &[[0, 1, 2]], &cam, &cfg);
            let soft = out.silhouette.data();
            let mut err = 0.0;
            for i in 0..48 {
                for j in 0..48 {
                    err += (soft[[i, j]] - hard.mask[[i, j]]).abs();
                }
            }
            assert!(err < prev_err, "sigma {sigma}: error {err} did not shrink (prev {prev_err})");
            prev_err = err;
        }
    }

    #[test]
    fn all_output_gradients_match_finite_differences() {
        let (verts, feats, faces) = two_triangle_scene();
        let cam = test_camera(32, 40.0);
        let cfg = RasterConfig {
            sigma_px: 1.5, // wide coverage keeps the FD step well inside the sigmoid band
            znear: 1e-3,
        };
        // fixed pseudo-random pixel weights make the scalar loss sensitive everywhere
        let mut s = 0x1234_5678_u64;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let w_sil = Tensor::constant(ArrayD::from_shape_fn(ndarray::IxDyn(&[32, 32]), |_| next()));
        let w_feat = Tensor::constant(ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 32, 32]), |_| next()));
        let w_norm = Tensor::constant(ArrayD::from_shape_fn(ndarray::IxDyn(&[3, 32, 32]), |_| next()));
        let w_depth = Tensor::constant(ArrayD::from_shape_fn(ndarray::IxDyn(&[32, 32]), |_| next()));
        let params = [verts.clone(), feats.clone()];

        let cases: Vec<(&str, Box<dyn Fn() -> Tensor>)> = vec![
            ("silhouette", Box::new({
                let (v, f, cam, cfg, w) = (verts.clone(), feats.clone(), cam.clone(), cfg.clone(), w_sil);
                let faces = faces.clone();
                move || rasterize_soft(&v, &f, &faces, &cam, &cfg).silhouette.mul(&w).sum_all()
            })),
            ("features", Box::new({
                let (v, f, cam, cfg, w) = (verts.clone(), feats.clone(), cam.clone(), cfg.clone(), w_feat);
                let faces = faces.clone();
                move || rasterize_soft(&v, &f, &faces, &cam, &cfg).features.mul(&w).sum_all()
            })),
            ("normals", Box::new({
                let (v, f, cam, cfg, w) = (verts.clone(), feats.clone(), cam.clone(), cfg.clone(), w_norm);
                let faces = faces.clone();
                move || rasterize_soft(&v, &f, &faces, &cam, &cfg).normals.mul(&w).sum_all()
            })),
            ("depth", Box::new({
                let (v, f, cam, cfg, w) = (verts.clone(), feats.clone(), cam.clone(), cfg.clone(), w_depth);
                let faces = faces.clone();
                move || rasterize_soft(&v, &f, &faces, &cam, &cfg).depth.mul(&w).sum_all()
            })),
        ];
        for (name, build) in cases {
            let e = grad_check(build, &params, 1e-5);
            assert!(e < 1e-3, "{name}: raster fd mismatch {e}");
        }
    }
}
