//! Differentiable rendering: a soft mesh rasterizer (silhouette, feature,
//! normal, depth images with gradients to vertices and per-vertex features),
//! a sphere tracer for signed-distance fields with IDR-style differentiable
//! hit points, and marching cubes for mesh extraction.

mod export;
mod marching;
mod mc_tables;
mod raster;
mod trace;

pub use export::{encode_normal_image, load_mask_png, load_rgb_png, save_mask_png, save_rgb_png, write_obj};
pub use marching::{marching_cubes, marching_cubes_values, marching_grid_points, TriMesh};
pub use raster::{rasterize_hard, rasterize_soft, HardRaster, RasterConfig, RasterOutput};
pub use trace::{idr_surface_points, sphere_trace_ray, RayHit, SdfField, TraceConfig};
