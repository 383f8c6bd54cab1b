//! Joint-angle trajectories as sums of sinusoid channels, optionally
//! time-mirrored to build paired sequences that end in bitwise-identical
//! poses with opposite approach velocities.

use crate::body::PoseState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SinChannel {
    pub joint: usize,
    /// 0, 1 or 2: axis-angle component driven by this channel.
    pub axis: usize,
    /// Radians.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MotionScript {
    pub channels: Vec<SinChannel>,
    pub frames: usize,
    /// When set, frame `t` is evaluated at time `2 * pivot - t`: the script
    /// runs backwards through the same trajectory, ending (at `t = pivot`)
    /// in exactly the pose of the forward script's ending.
    pub time_mirror: Option<usize>,
}

impl MotionScript {
    pub fn pose_at(&self, frame: usize, dt: f64, joint_count: usize) -> PoseState {
        let t_eff = match self.time_mirror {
            Some(pivot) => 2.0 * pivot as f64 - frame as f64,
            None => frame as f64,
        };
        let mut pose = PoseState::rest(joint_count);
        pose.timestamp = frame;
        for ch in &self.channels {
            if ch.joint >= joint_count || ch.axis >= 3 {
                continue;
            }
            let w = 2.0 * std::f64::consts::PI * ch.frequency;
            pose.joint_rotations[ch.joint][ch.axis] += ch.amplitude * (w * t_eff * dt + ch.phase).sin();
        }
        pose
    }

    pub fn poses(&self, dt: f64, joint_count: usize) -> Vec<PoseState> {
        (0..self.frames).map(|f| self.pose_at(f, dt, joint_count)).collect()
    }

    /// The time-mirrored partner ending at this script's final pose.
    pub fn mirrored(&self) -> MotionScript {
        MotionScript {
            channels: self.channels.clone(),
            frames: self.frames,
            time_mirror: Some(self.frames - 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swing() -> MotionScript {
        MotionScript {
            channels: vec![
                SinChannel {
                    joint: 2,
                    axis: 2,
                    amplitude: 0.5,
                    frequency: 0.8,
                    phase: 0.3,
                },
                SinChannel {
                    joint: 4,
                    axis: 2,
                    amplitude: -0.4,
                    frequency: 0.8,
                    phase: 0.3,
                },
            ],
            frames: 25,
            time_mirror: None,
        }
    }

    #[test]
    fn mirrored_script_ends_at_identical_pose_with_reversed_history() {
        let a = swing();
        let b = a.mirrored();
        let dt = 1.0 / 30.0;
        let pa = a.poses(dt, 8);
        let pb = b.poses(dt, 8);
        assert_eq!(
            pa.last().unwrap().joint_rotations,
            pb.last().unwrap().joint_rotations,
            "bitwise identical end pose"
        );
        // histories differ
        assert_ne!(pa[0].joint_rotations, pb[0].joint_rotations);
        // and b is a's extended trajectory walked backwards
        let mut ext = a.clone();
        ext.frames = 2 * a.frames - 1;
        let pe = ext.poses(dt, 8);
        for t in 0..a.frames {
            assert_eq!(pb[t].joint_rotations, pe[2 * (a.frames - 1) - t].joint_rotations);
        }
    }

    #[test]
    fn timestamps_strictly_increase() {
        let p = swing().poses(1.0 / 30.0, 8);
        for (t, pose) in p.iter().enumerate() {
            assert_eq!(pose.timestamp, t);
        }
    }
}
