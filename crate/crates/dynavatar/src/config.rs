//! Experiment configuration: sectioned TOML with defaults for every field,
//! unknown keys rejected, and the whole structure echoed into every output
//! artifact for provenance.

use crate::error::{Error, Result};
use crate::synth::DatasetConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BodyConfig {
    /// "procedural" or a path to a body model JSON file.
    pub source: String,
    pub rings: usize,
    pub segments: usize,
    /// Apply one 4-way subdivision after loading/building.
    pub subdivide: bool,
}

impl Default for BodyConfig {
    fn default() -> BodyConfig {
        BodyConfig {
            source: "procedural".into(),
            rings: 24,
            segments: 16,
            subdivide: true,
        }
    }
}

impl BodyConfig {
    pub fn build(&self) -> Result<crate::body::BodyModel> {
        let base = if self.source == "procedural" {
            crate::body::procgen::default_body(self.rings, self.segments)
        } else {
            crate::body::BodyModel::load(Path::new(&self.source))?
        };
        base.validate()?;
        if self.subdivide {
            crate::body::subdivide(&base)
        } else {
            Ok(base)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub uv_res: usize,
    pub feat_channels: usize,
    pub geo_hidden: Vec<usize>,
    pub unet_base: usize,
    pub unet_levels: usize,
    pub head_hidden: usize,
    /// Soft-raster width factor: sigma = factor x image diagonal.
    pub sigma_factor: f64,
    /// Halve sigma at 1/3 and 2/3 of training.
    pub anneal_sigma: bool,
    pub w_mask: f64,
    pub w_normal: f64,
    pub w_lap: f64,
    pub w_rgb: f64,
    pub w_vgg: f64,
    pub w_gan: f64,
}

impl Default for Stage1Config {
    fn default() -> Stage1Config {
        Stage1Config {
            seed: 21,
            steps: 2000,
            lr: 2e-3,
            uv_res: 128,
            feat_channels: 64,
            geo_hidden: vec![256, 256, 256, 256],
            unet_base: 16,
            unet_levels: 3,
            head_hidden: 16,
            sigma_factor: 1e-4,
            anneal_sigma: true,
            w_mask: 1.0,
            w_normal: 0.1,
            w_lap: 100.0,
            w_rgb: 1.0,
            w_vgg: 0.0,
            w_gan: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// History length including the current frame.
    pub t_hist: usize,
    /// Occupancy conversion scale: o = sigmoid(-s / beta).
    pub beta: f64,
    /// Soft mask scale on the per-ray minimum SDF value.
    pub beta_mask: f64,
    pub rays_per_step: usize,
    pub ratio_rays: f64,
    pub ratio_near: f64,
    pub ratio_uniform: f64,
    pub near_sigma: f64,
    pub pe_octaves: usize,
    pub geo_hidden: usize,
    pub geo_layers: usize,
    pub geo_skip: usize,
    pub geo_feature_dim: usize,
    pub tex_hidden: usize,
    pub tex_layers: usize,
    pub motion_base: usize,
    pub motion_levels: usize,
    pub motion_global_dim: usize,
    pub feat_channels: usize,
    pub uv_res: usize,
    pub sphere_init_radius: f64,
    pub w_iou: f64,
    pub w_color: f64,
    pub w_norm: f64,
    pub w_eik: f64,
    /// False = the no-explicit-offsets ablation (condition on the unclothed
    /// posed body instead of stage-1 geometry).
    pub use_stage1_offsets: bool,
    pub mc_resolution: usize,
    pub trace_eps: f64,
    pub trace_max_steps: usize,
    /// Scene bounding half-extent for uniform samples / tracing / extraction.
    pub scene_halfwidth: f64,
}

impl Default for Stage2Config {
    fn default() -> Stage2Config {
        Stage2Config {
            seed: 42,
            steps: 3000,
            lr: 1e-3,
            t_hist: 4,
            beta: 0.01,
            beta_mask: 0.005,
            rays_per_step: 128,
            ratio_rays: 0.5,
            ratio_near: 0.25,
            ratio_uniform: 0.25,
            near_sigma: 0.02,
            pe_octaves: 6,
            geo_hidden: 256,
            geo_layers: 8,
            geo_skip: 4,
            geo_feature_dim: 64,
            tex_hidden: 256,
            tex_layers: 4,
            motion_base: 16,
            motion_levels: 3,
            motion_global_dim: 64,
            feat_channels: 64,
            uv_res: 128,
            sphere_init_radius: 0.6,
            w_iou: 1.0,
            w_color: 1.0,
            w_norm: 0.1,
            w_eik: 0.1,
            use_stage1_offsets: true,
            mc_resolution: 64,
            trace_eps: 1e-4,
            trace_max_steps: 64,
            scene_halfwidth: 1.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub chamfer_samples: usize,
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            seed: 99,
            chamfer_samples: 10_000,
            metrics: vec!["ssim".into(), "tof".into(), "chamfer".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub body: BodyConfig,
    pub dataset: DatasetConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(format!("config {}", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable content hash of the full config (its canonical TOML form).
    pub fn hash(&self) -> String {
        crate::pipeline::hash_bytes(self.to_toml().as_bytes())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("[stage1]\nnot_a_field = 3\n").unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[dataset]\ntrain_sequences = 2\n").unwrap();
        assert_eq!(cfg.dataset.train_sequences, 2);
        assert_eq!(cfg.dataset.test_pairs, ExperimentConfig::default().dataset.test_pairs);
        // default dataset sizes: 600 train + 100 test frames
        let d = ExperimentConfig::default().dataset;
        assert_eq!(d.train_sequences * d.train_seq_len, 600);
        assert_eq!(d.test_pairs * 2 * d.test_seq_len, 100);
    }
}
