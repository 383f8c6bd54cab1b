//! 4-way face subdivision at edge midpoints.

use super::BodyModel;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::collections::BTreeMap;

/// Split every face into four via edge midpoints. Midpoint positions, skin
/// weights and UV coordinates are the averages of the edge endpoints, so
/// original vertices are untouched and new ones lie on original edges.
/// `V' = V + E` over the unique edges.
pub fn subdivide(body: &BodyModel) -> Result<BodyModel> {
    let v = body.vertex_count();
    let k = body.joint_count();

    // unique edges, with incidence counts for the manifold check
    let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in &body.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            if a == b {
                return Err(Error::InvalidModel("degenerate face edge".into()));
            }
            *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    if let Some(((a, b), c)) = edge_count.iter().find(|(_, &c)| c > 2) {
        return Err(Error::InvalidModel(format!(
            "non-manifold edge ({a},{b}) with {c} incident faces"
        )));
    }

    let e = edge_count.len();
    let mut verts = Array2::<f64>::zeros((v + e, 3));
    let mut weights = Array2::<f64>::zeros((v + e, k));
    let mut uv = Array2::<f64>::zeros((v + e, 2));
    verts.slice_mut(ndarray::s![0..v, ..]).assign(&body.template_vertices);
    weights.slice_mut(ndarray::s![0..v, ..]).assign(&body.skin_weights);
    uv.slice_mut(ndarray::s![0..v, ..]).assign(&body.uv_coords);

    let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut next = v;
    for (&(a, b), _) in &edge_count {
        for d in 0..3 {
            verts[[next, d]] = 0.5 * (verts[[a, d]] + verts[[b, d]]);
        }
        for d in 0..k {
            weights[[next, d]] = 0.5 * (weights[[a, d]] + weights[[b, d]]);
        }
        for d in 0..2 {
            uv[[next, d]] = 0.5 * (uv[[a, d]] + uv[[b, d]]);
        }
        midpoint.insert((a, b), next);
        next += 1;
    }

    let mid = |a: usize, b: usize| midpoint[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(body.faces.len() * 4);
    for f in &body.faces {
        let (a, b, c) = (f[0], f[1], f[2]);
        let (mab, mbc, mca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, mab, mca]);
        faces.push([b, mbc, mab]);
        faces.push([c, mca, mbc]);
        faces.push([mab, mbc, mca]);
    }

    Ok(BodyModel {
        template_vertices: verts,
        faces,
        joint_rest_positions: body.joint_rest_positions.clone(),
        parent_index: body.parent_index.clone(),
        skin_weights: weights,
        uv_coords: uv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::procgen;

    #[test]
    fn tetrahedron_counts() {
        let (v, f) = procgen::tetrahedron();
        let body = procgen::mesh_only_body(v, f);
        let sub = subdivide(&body).unwrap();
        assert_eq!(sub.vertex_count(), 10); // V + E = 4 + 6
        assert_eq!(sub.face_count(), 16); // 4F
    }

    #[test]
    fn reference_sphere_reaches_27554_vertices() {
        let (v, f) = procgen::uv_sphere(82, 84);
        assert_eq!((v.nrows(), f.len()), (6890, 13776));
        let sub = subdivide(&procgen::mesh_only_body(v, f)).unwrap();
        assert_eq!(sub.vertex_count(), 27_554);
        assert_eq!(sub.face_count(), 4 * 13_776);
    }

    #[test]
    fn vertices_preserved_and_midpoints_on_edges() {
        let body = procgen::default_body(10, 8);
        let sub = subdivide(&body).unwrap();
        let v = body.vertex_count();
        // originals untouched, bitwise
        assert_eq!(
            sub.template_vertices.slice(ndarray::s![0..v, ..]).to_owned().as_slice().unwrap(),
            body.template_vertices.as_slice().unwrap()
        );
        // every new vertex is the midpoint of some original edge
        let mut edges: std::collections::BTreeSet<(usize, usize)> = Default::default();
        for f in &body.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        assert_eq!(sub.vertex_count(), v + edges.len());
        for i in v..sub.vertex_count() {
            let p = sub.vertex(i);
            let on_some_edge = edges.iter().any(|&(a, b)| {
                let m = (body.vertex(a) + body.vertex(b)) * 0.5;
                (m - p).norm() < 1e-15
            });
            assert!(on_some_edge, "vertex {i} is not an edge midpoint");
        }
        // subdivided weight rows still sum to 1 and the subdivided body validates
        sub.validate().unwrap();
    }

    #[test]
    fn non_manifold_edge_rejected() {
        // three faces sharing edge (0,1)
        let verts = ndarray::arr2(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ]);
        let faces = vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]];
        let body = procgen::mesh_only_body(verts, faces);
        let err = subdivide(&body).unwrap_err();
        assert!(matches!(err, crate::Error::InvalidModel(_)), "{err}");
    }
}
