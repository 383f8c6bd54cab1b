//! Procedural per-vertex appearance: banded hues with stripes, shaded with
//! one directional light. Gives the RGB losses a structured target with
//! known provenance.

use crate::body::BodyModel;
use nalgebra::Vector3;
use ndarray::{Array2, ArrayView2};

/// Unlit albedo per template vertex.
pub fn vertex_albedo(body: &BodyModel) -> Array2<f64> {
    let v = body.vertex_count();
    let mut out = Array2::<f64>::zeros((v, 3));
    for i in 0..v {
        let y = body.template_vertices[[i, 1]];
        let x = body.template_vertices[[i, 0]];
        let z = body.template_vertices[[i, 2]];
        let theta = z.atan2(x);
        // region hue by height band
        let (mut r, mut g, mut b) = if y < -0.45 {
            (0.25, 0.3, 0.65) // legs
        } else if y < -0.02 {
            (0.7, 0.3, 0.25) // skirt band
        } else if y < 0.42 {
            (0.25, 0.6, 0.3) // torso
        } else if y < 0.6 {
            (0.65, 0.6, 0.25) // shoulders
        } else {
            (0.8, 0.65, 0.55) // head
        };
        let stripe = 0.18 * (y * 28.0).sin() + 0.1 * (3.0 * theta).sin();
        r = (r + stripe).clamp(0.05, 0.95);
        g = (g + stripe).clamp(0.05, 0.95);
        b = (b + stripe).clamp(0.05, 0.95);
        out[[i, 0]] = r;
        out[[i, 1]] = g;
        out[[i, 2]] = b;
    }
    out
}

/// Lambertian shading of per-vertex albedo with the given posed normals.
pub fn shade_vertices(albedo: &ArrayView2<'_, f64>, normals: &ArrayView2<'_, f64>) -> Array2<f64> {
    let light = Vector3::new(0.35, 0.8, 0.55).normalize();
    let ambient = 0.35;
    let diffuse = 0.65;
    let mut out = albedo.to_owned();
    for i in 0..out.nrows() {
        let n = Vector3::new(normals[[i, 0]], normals[[i, 1]], normals[[i, 2]]);
        let shade = ambient + diffuse * n.dot(&light).max(0.0);
        for c in 0..3 {
            out[[i, c]] = (out[[i, c]] * shade).clamp(0.0, 1.0);
        }
    }
    out
}
