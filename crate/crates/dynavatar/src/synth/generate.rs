//! Sequence generation and the on-disk dataset format.
//!
//! A dataset split directory holds `frames/{:06}.png` (RGB),
//! `masks/{:06}.png` (8-bit binary), `normals/{:06}.png` (RGB-encoded
//! `n*0.5+0.5`), `meta.json` (poses, camera, cloth, seed, sequence table)
//! and `gt_surfaces.bin` (magic `DGT1`, u32 frame count, u32 vertex count,
//! then V x 3 little-endian f32 per frame).

use super::{band_profile, simulate_offsets, vertex_albedo, ClothParams, MotionScript, SinChannel};
use crate::body::{pose_mesh, BodyModel, CameraModel, PoseState};
use crate::error::{Error, Result};
use crate::render::{encode_normal_image, load_mask_png, load_rgb_png, rasterize_hard, save_mask_png, save_rgb_png};
use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const GT_MAGIC: &[u8; 4] = b"DGT1";

/// One supervised frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub pose: PoseState,
    /// `[3, H, W]` in [0,1].
    pub rgb: Array3<f64>,
    /// `[H, W]` in {0,1}.
    pub mask: Array2<f64>,
    /// `[3, H, W]` camera-frame unit normals, zero where mask = 0.
    pub normal: Array3<f64>,
    /// `V x 3` clothed surface (evaluation oracle; training only ever sees
    /// the rendered images).
    pub gt_surface: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    /// First frame index within the split.
    pub start: usize,
    pub len: usize,
    /// Paired test sequences ending in an identical pose share a pair id.
    pub pair_id: Option<usize>,
    /// "a" (forward) or "b" (time-mirrored) within a pair.
    pub pair_role: Option<String>,
    pub script: MotionScript,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub seed: u64,
    pub dt: f64,
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
    pub cloth: ClothParams,
    pub sequences: Vec<SequenceMeta>,
    pub poses: Vec<PoseState>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<FrameRecord>,
}

impl Dataset {
    /// Frame-history indices for frame `i` (newest first, front-padded at
    /// the sequence start), entirely within its own sequence.
    pub fn history(&self, frame: usize, t_hist: usize) -> Vec<usize> {
        let seq = self
            .meta
            .sequences
            .iter()
            .find(|s| frame >= s.start && frame < s.start + s.len)
            .expect("frame belongs to a sequence");
        (0..t_hist)
            .map(|k| frame.saturating_sub(k).max(seq.start))
            .collect()
    }
}

/// Generation settings (defaults give 600 train + 100 test frames).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_sequences: usize,
    pub train_seq_len: usize,
    pub test_pairs: usize,
    pub test_seq_len: usize,
    pub width: usize,
    pub height: usize,
    pub camera_eye: [f64; 3],
    pub camera_target: [f64; 3],
    pub focal: f64,
    pub cloth: ClothParams,
}

impl Default for DatasetConfig {
    fn default() -> DatasetConfig {
        DatasetConfig {
            seed: 7,
            train_sequences: 10,
            train_seq_len: 60,
            test_pairs: 5,
            test_seq_len: 10,
            width: 128,
            height: 128,
            camera_eye: [0.0, 0.05, 2.6],
            camera_target: [0.0, 0.0, 0.0],
            focal: 170.0,
            cloth: ClothParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn camera(&self) -> CameraModel {
        CameraModel::look_at(
            Vector3::new(self.camera_eye[0], self.camera_eye[1], self.camera_eye[2]),
            Vector3::new(self.camera_target[0], self.camera_target[1], self.camera_target[2]),
            Vector3::new(0.0, 1.0, 0.0),
            self.focal,
            self.width,
            self.height,
        )
    }
}

/// True when no face of the mesh fronts the camera.
pub fn all_backfacing(verts: &Array2<f64>, faces: &[[usize; 3]], camera: &CameraModel) -> bool {
    let eye = camera.eye();
    for f in faces {
        let a = Vector3::new(verts[[f[0], 0]], verts[[f[0], 1]], verts[[f[0], 2]]);
        let b = Vector3::new(verts[[f[1], 0]], verts[[f[1], 1]], verts[[f[1], 2]]);
        let c = Vector3::new(verts[[f[2], 0]], verts[[f[2], 1]], verts[[f[2], 2]]);
        let n = (b - a).cross(&(c - a));
        let centroid = (a + b + c) / 3.0;
        if n.dot(&(centroid - eye)) < 0.0 {
            return false;
        }
    }
    true
}

/// Render one sequence of ground truth: pose the body, add simulated cloth
/// offsets, shade the procedural texture, hard-rasterize. Deterministic.
pub fn generate_sequence(
    body: &BodyModel,
    script: &MotionScript,
    cloth: &ClothParams,
    camera: &CameraModel,
) -> Result<Vec<FrameRecord>> {
    let poses = script.poses(cloth.dt, body.joint_count());
    if poses.is_empty() {
        return Err(Error::InvalidInput("script has no frames".into()));
    }
    let offsets = simulate_offsets(body, &poses, cloth)?;
    let albedo = vertex_albedo(body);
    let frames: Vec<Result<FrameRecord>> = poses
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(pose, offset)| {
            let posed = pose_mesh(body, pose)?;
            let surf = &posed + offset;
            if all_backfacing(&surf, &body.faces, camera) {
                log::warn!("camera behind subject at frame {}: emitting anyway", pose.timestamp);
            }
            let normals = body.vertex_normals(&surf.view());
            let shaded = super::texture::shade_vertices(&albedo.view(), &normals.view());
            let raster = rasterize_hard(&surf.view(), &shaded.view(), &body.faces, camera);
            Ok(FrameRecord {
                pose: pose.clone(),
                rgb: raster.features,
                mask: raster.mask,
                normal: raster.normals,
                gt_surface: surf,
            })
        })
        .collect();
    frames.into_iter().collect()
}

fn sample_script(rng: &mut ChaCha8Rng, frames: usize) -> MotionScript {
    use crate::body::procgen::joints;
    let amp: f64 = rng.gen_range(0.25..0.55);
    let freq: f64 = rng.gen_range(0.5..1.1);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let knee_amp: f64 = rng.gen_range(0.10..0.30);
    let r_scale: f64 = rng.gen_range(0.7..1.0);
    let sway: f64 = rng.gen_range(0.04..0.12);
    let sway_freq: f64 = rng.gen_range(0.3..0.8);
    MotionScript {
        channels: vec![
            SinChannel { joint: joints::HIP_L, axis: 2, amplitude: amp, frequency: freq, phase },
            SinChannel { joint: joints::HIP_R, axis: 2, amplitude: -amp * r_scale, frequency: freq, phase },
            SinChannel { joint: joints::KNEE_L, axis: 2, amplitude: knee_amp, frequency: freq, phase: phase + 0.9 },
            SinChannel { joint: joints::KNEE_R, axis: 2, amplitude: -knee_amp, frequency: freq, phase: phase + 0.9 },
            SinChannel { joint: joints::SPINE, axis: 0, amplitude: sway, frequency: sway_freq, phase: 0.0 },
        ],
        frames,
        time_mirror: None,
    }
}

/// Build the train and test splits in memory. Train sequences are free
/// motions; test sequences come in time-mirrored pairs ending in identical
/// poses with different histories.
pub fn build_dataset(body: &BodyModel, cfg: &DatasetConfig) -> Result<(Dataset, Dataset)> {
    let camera = cfg.camera();
    camera.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut make_split = |specs: Vec<(String, MotionScript, Option<usize>, Option<String>)>| -> Result<Dataset> {
        let mut sequences = Vec::new();
        let mut poses = Vec::new();
        let mut frames = Vec::new();
        for (name, script, pair_id, pair_role) in specs {
            let recs = generate_sequence(body, &script, &cfg.cloth, &camera)?;
            sequences.push(SequenceMeta {
                name,
                start: frames.len(),
                len: recs.len(),
                pair_id,
                pair_role,
                script,
            });
            for r in recs {
                poses.push(r.pose.clone());
                frames.push(r);
            }
        }
        Ok(Dataset {
            meta: DatasetMeta {
                format_version: DATASET_FORMAT_VERSION,
                seed: cfg.seed,
                dt: cfg.cloth.dt,
                width: cfg.width,
                height: cfg.height,
                camera: camera.clone(),
                cloth: cfg.cloth.clone(),
                sequences,
                poses,
            },
            frames,
        })
    };

    let mut train_specs = Vec::new();
    for i in 0..cfg.train_sequences {
        train_specs.push((
            format!("train{i:03}"),
            sample_script(&mut rng, cfg.train_seq_len),
            None,
            None,
        ));
    }
    let mut test_specs = Vec::new();
    for i in 0..cfg.test_pairs {
        let a = sample_script(&mut rng, cfg.test_seq_len);
        let b = a.mirrored();
        test_specs.push((format!("pair{i:02}a"), a, Some(i), Some("a".to_string())));
        test_specs.push((format!("pair{i:02}b"), b, Some(i), Some("b".to_string())));
    }
    let train = make_split(train_specs)?;
    let test = make_split(test_specs)?;
    Ok((train, test))
}

/// Write one split to a directory (created if needed).
pub fn write_split(dir: &Path, ds: &Dataset) -> Result<()> {
    for sub in ["frames", "masks", "normals"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    for (i, f) in ds.frames.iter().enumerate() {
        save_rgb_png(&dir.join(format!("frames/{i:06}.png")), &f.rgb.view())?;
        save_mask_png(&dir.join(format!("masks/{i:06}.png")), &f.mask.view())?;
        let enc = encode_normal_image(&f.normal.view());
        save_rgb_png(&dir.join(format!("normals/{i:06}.png")), &enc.view())?;
    }
    // gt_surfaces.bin
    let v = ds.frames.first().map(|f| f.gt_surface.nrows()).unwrap_or(0);
    let mut buf: Vec<u8> = Vec::with_capacity(16 + ds.frames.len() * v * 12);
    buf.extend_from_slice(GT_MAGIC);
    buf.extend_from_slice(&(ds.frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(v as u32).to_le_bytes());
    for f in &ds.frames {
        assert_eq!(f.gt_surface.nrows(), v);
        for val in f.gt_surface.iter() {
            buf.extend_from_slice(&(*val as f32).to_le_bytes());
        }
    }
    let p = dir.join("gt_surfaces.bin");
    let mut file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    file.write_all(&buf).map_err(|e| Error::io(&p, e))?;

    let meta = serde_json::to_string_pretty(&ds.meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta).map_err(|e| Error::io(dir.join("meta.json"), e))
}

/// Read a split back. Masks are re-binarized, normals re-normalized and
/// zeroed outside the mask (PNG quantization).
pub fn read_split(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(format!("dataset split {}", dir.display())),
        _ => Error::io(&meta_path, e),
    })?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("meta.json: {e}")))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "dataset format_version {} (expected {DATASET_FORMAT_VERSION})",
            meta.format_version
        )));
    }

    let gt_path = dir.join("gt_surfaces.bin");
    let mut raw = Vec::new();
    std::fs::File::open(&gt_path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(format!("{}", gt_path.display())),
            _ => Error::io(&gt_path, e),
        })?
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(&gt_path, e))?;
    if raw.len() < 12 || &raw[0..4] != GT_MAGIC {
        return Err(Error::InvalidInput("gt_surfaces.bin: bad magic".into()));
    }
    let n_frames = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
    let v = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
    if raw.len() != 12 + n_frames * v * 3 * 4 {
        return Err(Error::InvalidInput("gt_surfaces.bin: truncated".into()));
    }
    if n_frames != meta.poses.len() {
        return Err(Error::InvalidInput("gt_surfaces.bin frame count != meta poses".into()));
    }

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let rgb = load_rgb_png(&dir.join(format!("frames/{i:06}.png")))?;
        let mask_raw = load_mask_png(&dir.join(format!("masks/{i:06}.png")))?;
        let mask = mask_raw.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let enc = load_rgb_png(&dir.join(format!("normals/{i:06}.png")))?;
        let (h, w) = mask.dim();
        let mut normal = Array3::<f64>::zeros((3, h, w));
        for yy in 0..h {
            for xx in 0..w {
                if mask[[yy, xx]] == 0.0 {
                    continue;
                }
                let mut n = [0.0; 3];
                for c in 0..3 {
                    n[c] = enc[[c, yy, xx]] * 2.0 - 1.0;
                }
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if len > 1e-6 {
                    for c in 0..3 {
                        normal[[c, yy, xx]] = n[c] / len;
                    }
                }
            }
        }
        let mut gt = Array2::<f64>::zeros((v, 3));
        let base = 12 + i * v * 3 * 4;
        for r in 0..v {
            for c in 0..3 {
                let o = base + (r * 3 + c) * 4;
                gt[[r, c]] = f32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as f64;
            }
        }
        frames.push(FrameRecord {
            pose: meta.poses[i].clone(),
            rgb,
            mask,
            normal,
            gt_surface: gt,
        });
    }
    Ok(Dataset { meta, frames })
}
