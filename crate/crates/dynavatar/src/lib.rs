//! Compositional modeling of clothed, animated bodies from single-view
//! renders, at desk scale.
//!
//! The pipeline has two learned stages. The explicit stage predicts
//! pose-dependent vertex offsets and UV-space appearance features on top of a
//! miniature articulated body model, trained against rendered silhouettes,
//! normals and colors. The motion stage encodes a short history of those
//! explicit geometries (as UV maps) into global and local motion features and
//! decodes a motion-conditioned implicit surface (signed distance + occupancy
//! + color), rendered by sphere tracing.
//!
//! Everything runs on the CPU in `f64`, on a hand-rolled reverse-mode tape
//! (see [`tape`]), so every gradient in the system can be checked against
//! central finite differences. Ground truth is fully synthetic: a damped
//! spring band on the body surface makes clothing geometry depend on motion
//! history, not pose alone, which is the behaviour the motion stage exists to
//! capture.
//!
//! The narrative guide lives in `book/` (mdBook); its code snippets are
//! compiled and run as doctests through the [`guide`] module.

pub mod body;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod explicit;
pub mod guide;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod tape;

pub use error::{Error, Result};
