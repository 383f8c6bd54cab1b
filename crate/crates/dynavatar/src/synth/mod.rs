//! Synthetic ground truth with motion-dependent clothing.
//!
//! A band of vertices ("the skirt band") carries a scalar offset along the
//! outward normal, driven by a damped spring toward a pose-dependent rest
//! offset. Because the spring has state, two motions arriving at the same
//! pose with different histories leave different geometry — exactly the
//! ambiguity the motion stage is built to resolve, with the simulator as its
//! oracle.

mod generate;
mod script;
mod spring;
mod texture;

pub use generate::{
    all_backfacing, build_dataset, generate_sequence, read_split, write_split, Dataset,
    DatasetConfig, DatasetMeta, FrameRecord, SequenceMeta, DATASET_FORMAT_VERSION,
};
pub use script::{MotionScript, SinChannel};
pub use spring::{simulate_offsets, ClothParams, ClothState};
pub use texture::vertex_albedo;

use crate::body::BodyModel;

/// Per-vertex amplitude profile of the offset band: a smooth bump over the
/// configured height range, zero outside.
pub fn band_profile(body: &BodyModel, y_lo: f64, y_hi: f64) -> Vec<f64> {
    let mid = 0.5 * (y_lo + y_hi);
    let half = 0.5 * (y_hi - y_lo);
    (0..body.vertex_count())
        .map(|i| {
            let y = body.template_vertices[[i, 1]];
            let t = (y - mid) / half;
            if t.abs() >= 1.0 {
                0.0
            } else {
                (0.5 * std::f64::consts::PI * t).cos().powi(2)
            }
        })
        .collect()
}
