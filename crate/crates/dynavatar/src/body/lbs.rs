//! Forward kinematics and linear blend skinning.

use super::{row3, BodyModel, PoseState};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::Array2;

/// Rigid transform as (rotation, translation): x -> R x + t.
#[derive(Debug, Clone, Copy)]
pub struct Rigid {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Rigid {
    fn identity() -> Rigid {
        Rigid {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }
}

/// Per-joint global skinning transforms `S_k`: template space to posed space.
///
/// Recursion in pivot form, `S_k = S_parent ∘ (Trans(j_k) R_k Trans(-j_k))`:
/// each joint rotates the template about its own rest position, after its
/// parent's transform; the root additionally carries the pose translation.
/// At rest every factor is exactly the identity, so the posed mesh equals
/// the template bitwise.
pub fn joint_transforms(body: &BodyModel, pose: &PoseState) -> Result<Vec<Rigid>> {
    let k = body.joint_count();
    if pose.joint_count() != k {
        return Err(Error::DimensionMismatch(format!(
            "pose has {} joints, body has {k}",
            pose.joint_count()
        )));
    }
    pose.validate()?;

    // children processed after parents
    let order = topo_order(&body.parent_index);
    let mut skin: Vec<Option<Rigid>> = vec![None; k];
    for &j in &order {
        let rot = *Rotation3::from_scaled_axis(Vector3::new(
            pose.joint_rotations[j][0],
            pose.joint_rotations[j][1],
            pose.joint_rotations[j][2],
        ))
        .matrix();
        let jp = row3(&body.joint_rest_positions.view(), j);
        let pivot = Rigid {
            r: rot,
            t: jp - rot * jp,
        };
        let s = match body.parent_index[j] {
            None => {
                let t = Vector3::new(
                    pose.root_translation[0],
                    pose.root_translation[1],
                    pose.root_translation[2],
                );
                Rigid {
                    r: pivot.r,
                    t: pivot.t + t,
                }
            }
            Some(p) => skin[p].as_ref().expect("topo order").compose(&pivot),
        };
        skin[j] = Some(s);
    }
    Ok(skin.into_iter().map(|s| s.expect("all joints reached")).collect())
}

fn topo_order(parents: &[Option<usize>]) -> Vec<usize> {
    let k = parents.len();
    let mut order = Vec::with_capacity(k);
    let mut placed = vec![false; k];
    while order.len() < k {
        let before = order.len();
        for j in 0..k {
            if placed[j] {
                continue;
            }
            let ready = match parents[j] {
                None => true,
                Some(p) => placed[p],
            };
            if ready {
                placed[j] = true;
                order.push(j);
            }
        }
        assert!(order.len() > before, "skeleton validated as a tree");
    }
    order
}

/// Linear blend skinning: `P_i = sum_k w_ik S_k(template_i)`.
pub fn pose_mesh(body: &BodyModel, pose: &PoseState) -> Result<Array2<f64>> {
    let transforms = joint_transforms(body, pose)?;
    // Rest pose short-circuits to the template itself: blending with weight
    // rows that sum to 1 only within tolerance would otherwise smear the
    // identity by one ulp.
    let identity = Rigid::identity();
    if transforms.iter().all(|s| s.r == identity.r && s.t == identity.t) {
        return Ok(body.template_vertices.clone());
    }
    let v = body.vertex_count();
    let mut out = Array2::<f64>::zeros((v, 3));
    for i in 0..v {
        let p = body.vertex(i);
        let mut acc = Vector3::zeros();
        for (k, tr) in transforms.iter().enumerate() {
            let w = body.skin_weights[[i, k]];
            if w != 0.0 {
                acc += w * tr.apply(&p);
            }
        }
        out[[i, 0]] = acc[0];
        out[[i, 1]] = acc[1];
        out[[i, 2]] = acc[2];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::procgen;

    #[test]
    fn identity_pose_reproduces_template_exactly() {
        let body = procgen::default_body(12, 9);
        let pose = PoseState::rest(body.joint_count());
        let posed = pose_mesh(&body, &pose).unwrap();
        assert_eq!(
            posed.as_slice().unwrap(),
            body.template_vertices.as_slice().unwrap(),
            "identity pose must be bitwise the template"
        );
    }

    #[test]
    fn single_joint_root_rotation_is_rigid() {
        // one joint at the origin: posed = R * template
        let body = procgen::single_joint_test_body();
        let mut pose = PoseState::rest(1);
        pose.joint_rotations[0] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let posed = pose_mesh(&body, &pose).unwrap();
        let r = Rotation3::from_scaled_axis(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        for i in 0..body.vertex_count() {
            let expect = r * body.vertex(i);
            let got = row3(&posed.view(), i);
            assert!((expect - got).norm() < 1e-12, "vertex {i}");
        }
    }

    #[test]
    fn two_joint_chain_matches_hand_forward_kinematics() {
        // Root at origin, child at (0, 1, 0); vertex at (0, 2, 0) fully bound
        // to the child. Bend the child 90 degrees about +z.
        //
        // Hand FK oracle: the child pivot is at (0,1,0); rotating the vertex
        // (0,2,0) about it by +90 deg about z sends the offset (0,1,0) to
        // (-1,0,0), so the vertex lands at (-1,1,0).
        let body = procgen::two_joint_chain_test_body();
        let mut pose = PoseState::rest(2);
        pose.joint_rotations[1] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let posed = pose_mesh(&body, &pose).unwrap();
        let tip = row3(&posed.view(), procgen::TWO_JOINT_TIP_VERTEX);
        let expect = Vector3::new(-1.0, 1.0, 0.0);
        assert!((tip - expect).norm() < 1e-12, "{tip:?}");
    }

    #[test]
    fn rigid_equivariance_of_posed_mesh() {
        // root (R, t) composed with arbitrary limb pose equals R * posed + t
        // when the root rest position is at the origin.
        let body = procgen::default_body(12, 9);
        let mut limb_pose = PoseState::rest(body.joint_count());
        limb_pose.joint_rotations[2] = [0.1, -0.2, 0.4];
        limb_pose.joint_rotations[3] = [0.0, 0.0, -0.6];
        let base = pose_mesh(&body, &limb_pose).unwrap();

        let mut moved = limb_pose.clone();
        let axis = Vector3::new(0.3, 1.1, -0.2);
        moved.joint_rotations[0] = [axis[0], axis[1], axis[2]];
        moved.root_translation = [0.25, -0.1, 0.6];
        let posed = pose_mesh(&body, &moved).unwrap();

        let r = Rotation3::from_scaled_axis(axis);
        let t = Vector3::new(0.25, -0.1, 0.6);
        for i in 0..body.vertex_count() {
            let expect = r * row3(&base.view(), i) + t;
            let got = row3(&posed.view(), i);
            assert!((expect - got).norm() < 1e-6, "vertex {i}: {expect:?} vs {got:?}");
        }
    }

    #[test]
    fn joint_count_mismatch_is_rejected() {
        let body = procgen::default_body(12, 9);
        let pose = PoseState::rest(3);
        assert!(matches!(
            pose_mesh(&body, &pose),
            Err(crate::Error::DimensionMismatch(_))
        ));
    }
}
