//! Stage 1: explicit pose-dependent geometry and appearance.
//!
//! A small MLP maps flattened pose parameters to per-vertex offsets on top of
//! the skinned body (`G = P + dG`, with the static part `dG_s = net(0)` and
//! the dynamic part `dG_d = net(pose) - net(0)`). A U-Net over the UV-space
//! geometry map produces a feature grid; sampling it back per vertex,
//! rasterizing, and decoding through a two-layer conv head yields the
//! rendered image. Supervision is rendered-vs-ground-truth: mask, normal,
//! RGB, plus a Laplacian smoothness term on the offsets (and optional
//! frozen-feature and adversarial terms, off by default).

mod train;

pub use train::{train_stage1, Stage1Checkpoint};

use crate::body::{pose_mesh, Atlas, BodyModel, CameraModel, PoseState};
use crate::config::Stage1Config;
use crate::error::{Error, Result};
use crate::nn::{Act, Conv, Init, Linear, Mlp, UNet, UNetConfig};
use crate::render::{rasterize_soft, RasterConfig};
use crate::synth::FrameRecord;
use crate::tape::{sparse_apply, SparseMap, Tensor};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Fixed per-experiment geometry context.
pub struct Scene {
    pub body: BodyModel,
    pub atlas: Atlas,
    pub laplacian: Rc<SparseMap>,
}

impl Scene {
    pub fn new(body: BodyModel, uv_res: usize) -> Result<Scene> {
        let atlas = Atlas::build(&body, uv_res)?;
        let laplacian = crate::body::laplacian(&body)?;
        Ok(Scene {
            body,
            atlas,
            laplacian,
        })
    }
}

/// Static/dynamic split of the predicted offsets; `total = statics + dynamic`
/// by construction.
pub struct OffsetDecomposition {
    pub statics: Tensor,
    pub dynamic: Tensor,
    pub total: Tensor,
}

pub struct Stage1Nets {
    pub cfg: Stage1Config,
    pub joint_count: usize,
    pub vertex_count: usize,
    pub geo: Mlp,
    pub app: UNet,
    pub head_c1: Conv,
    pub head_c2: Conv,
}

impl Stage1Nets {
    pub fn new(cfg: &Stage1Config, joint_count: usize, vertex_count: usize) -> Stage1Nets {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dims = vec![3 * joint_count];
        dims.extend_from_slice(&cfg.geo_hidden);
        dims.push(3 * vertex_count);
        let mut geo = Mlp::new(&mut rng, &dims, Act::Silu, Act::Identity, None);
        // residual head: start exactly at G = P
        let last = geo.layers.len() - 1;
        let (li, lo) = (geo.layers[last].in_dim(), geo.layers[last].out_dim());
        geo.layers[last] = Linear::new(&mut rng, li, lo, Init::Zeros);

        let app = UNet::new(
            &mut rng,
            UNetConfig {
                in_ch: 3,
                base: cfg.unet_base,
                levels: cfg.unet_levels,
                out_ch: cfg.feat_channels,
                latent_dim: 8, // unused by stage 1
            },
        );
        let head_c1 = Conv::new_public(&mut rng, cfg.feat_channels, cfg.head_hidden, 3, 1);
        let head_c2 = Conv::new_public(&mut rng, cfg.head_hidden, 3, 3, 1);
        Stage1Nets {
            cfg: cfg.clone(),
            joint_count,
            vertex_count,
            geo,
            app,
            head_c1,
            head_c2,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.geo.named_params("geo", &mut out);
        self.app.named_params("app", &mut out);
        out.push(("head.c1.w".into(), self.head_c1.w.clone()));
        out.push(("head.c1.b".into(), self.head_c1.b.clone()));
        out.push(("head.c2.w".into(), self.head_c2.w.clone()));
        out.push(("head.c2.b".into(), self.head_c2.b.clone()));
        out
    }

    /// Static offset from the zero pose vector, dynamic offset as the
    /// residual to the posed evaluation.
    pub fn predict_offsets(&self, pose: &PoseState) -> Result<OffsetDecomposition> {
        if pose.joint_count() != self.joint_count {
            return Err(Error::DimensionMismatch(format!(
                "pose joints {} vs net {}",
                pose.joint_count(),
                self.joint_count
            )));
        }
        let flat = pose.flat_rotations();
        let v = self.vertex_count;
        let zero_in = Tensor::constant(ArrayD::zeros(IxDyn(&[1, 3 * self.joint_count])));
        let pose_in = Tensor::constant(
            ndarray::Array2::from_shape_vec((1, flat.len()), flat).unwrap().into_dyn(),
        );
        let statics = self.geo.forward(&zero_in).reshape(&[v, 3]);
        let posed = self.geo.forward(&pose_in).reshape(&[v, 3]);
        let dynamic = posed.sub(&statics);
        let total = statics.add(&dynamic);
        Ok(OffsetDecomposition {
            statics,
            dynamic,
            total,
        })
    }

    /// Posed body plus predicted offsets: `G = P + dG` (tape), with the
    /// skinned base as a constant.
    pub fn explicit_geometry(
        &self,
        scene: &Scene,
        pose: &PoseState,
    ) -> Result<(Tensor, OffsetDecomposition)> {
        let decomp = self.predict_offsets(pose)?;
        let base = pose_mesh(&scene.body, pose)?;
        let g = Tensor::constant(base.into_dyn()).add(&decomp.total);
        Ok((g, decomp))
    }

    /// Appearance features: U-Net over the UV map of the geometry, with
    /// invalid texels zeroed.
    pub fn extract_appearance(&self, scene: &Scene, g: &Tensor) -> Tensor {
        let uv_map = scene.atlas.rasterize_t(g);
        let out = self.app.forward(&uv_map);
        scene.atlas.mask_grid_t(&out.grid)
    }

    /// Render: per-vertex features from the appearance grid, soft raster,
    /// conv head to RGB. Returns (rgb `[3,H,W]`, mask `[H,W]`, normals
    /// `[3,H,W]`).
    pub fn render_explicit(
        &self,
        scene: &Scene,
        g: &Tensor,
        a: &Tensor,
        camera: &CameraModel,
        sigma_px: f64,
    ) -> (Tensor, Tensor, Tensor) {
        let feats = scene.atlas.sample_vertices_t(a);
        let cfg = RasterConfig {
            sigma_px,
            znear: 1e-3,
        };
        let out = rasterize_soft(g, &feats, &scene.body.faces, camera, &cfg);
        let h1 = self.head_c1.forward(&out.features).silu();
        let rgb = self.head_c2.forward(&h1).sigmoid();
        (rgb, out.silhouette, out.normals)
    }
}

/// Per-term stage-1 loss values (unweighted) plus the weighted total on tape.
pub struct Stage1Loss {
    pub total: Tensor,
    pub mask: f64,
    pub normal: f64,
    pub lap: f64,
    pub rgb: f64,
    pub vgg: f64,
    pub gan: f64,
}

/// Ground truth of one frame, prepared as constant tensors.
pub struct FrameTargets {
    pub rgb: Tensor,
    pub mask: Tensor,
    pub normal: Tensor,
    /// Flattened [HW] 0/1 weights of GT-valid pixels and their count.
    pub mask_flat: Tensor,
    pub mask_count: f64,
}

impl FrameTargets {
    pub fn new(frame: &FrameRecord) -> FrameTargets {
        let count = frame.mask.iter().filter(|&&v| v > 0.5).count() as f64;
        let (h, w) = frame.mask.dim();
        FrameTargets {
            rgb: Tensor::constant(frame.rgb.clone().into_dyn()),
            mask: Tensor::constant(frame.mask.clone().into_dyn()),
            normal: Tensor::constant(frame.normal.clone().into_dyn()),
            mask_flat: Tensor::constant(
                frame.mask.clone().into_shape_with_order(IxDyn(&[h * w])).unwrap(),
            ),
            mask_count: count,
        }
    }
}

/// Frozen random conv stack standing in for a pretrained perceptual network:
/// multi-scale features from fixed, seed-frozen weights.
pub struct FrozenFeatures {
    convs: Vec<(Tensor, Tensor)>, // constant weights/biases
}

impl FrozenFeatures {
    pub fn new(seed: u64) -> FrozenFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3usize, 8usize), (8, 12), (12, 16)];
        let convs = plan
            .iter()
            .map(|&(ci, co)| {
                let std = (2.0 / (ci * 9) as f64).sqrt();
                let w = ArrayD::from_shape_fn(IxDyn(&[co, ci, 3, 3]), |_| crate::nn::normal(&mut rng, std));
                (
                    Tensor::constant(w),
                    Tensor::constant(ArrayD::zeros(IxDyn(&[co]))),
                )
            })
            .collect();
        FrozenFeatures { convs }
    }

    pub fn features(&self, img: &Tensor) -> Vec<Tensor> {
        let mut h = img.clone();
        let mut out = Vec::new();
        for (w, b) in &self.convs {
            h = crate::tape::conv2d(&h, w, b, 2, 1).tanh();
            out.push(h.clone());
        }
        out
    }

    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let fa = self.features(a);
        let fb = self.features(b);
        let mut acc = Tensor::scalar(0.0);
        for (x, y) in fa.iter().zip(fb.iter()) {
            acc = acc.add(&x.sub(y).abs().mean_all());
        }
        acc.mul_scalar(1.0 / self.convs.len() as f64)
    }
}

/// Four-layer patch discriminator for the optional adversarial term.
pub struct PatchDiscriminator {
    convs: Vec<Conv>,
}

impl PatchDiscriminator {
    pub fn new(seed: u64) -> PatchDiscriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3usize, 8usize), (8, 16), (16, 16), (16, 1)];
        PatchDiscriminator {
            convs: plan.iter().map(|&(ci, co)| Conv::new_public(&mut rng, ci, co, 3, 2)).collect(),
        }
    }

    /// Patch logits.
    pub fn logits(&self, img: &Tensor) -> Tensor {
        let mut h = img.clone();
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(&h);
            if i + 1 < self.convs.len() {
                h = h.silu();
            }
        }
        h
    }

    /// Non-saturating generator loss: mean softplus(-D(fake)).
    pub fn generator_loss(&self, fake: &Tensor) -> Tensor {
        self.logits(fake).neg().softplus(1.0).mean_all()
    }

    /// Discriminator loss: mean softplus(-D(real)) + softplus(D(fake)).
    pub fn discriminator_loss(&self, real: &Tensor, fake: &Tensor) -> Tensor {
        let lr = self.logits(real).neg().softplus(1.0).mean_all();
        let lf = self.logits(&fake.detach()).softplus(1.0).mean_all();
        lr.add(&lf)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("disc.c{i}.w"), c.w.clone()));
            out.push((format!("disc.c{i}.b"), c.b.clone()));
        }
        out
    }
}

/// The stage-1 objective. Every term is nonnegative; the total is the
/// weighted sum of the reported breakdown.
#[allow(clippy::too_many_arguments)]
pub fn stage1_loss(
    cfg: &Stage1Config,
    scene: &Scene,
    rgb: &Tensor,
    mask: &Tensor,
    normals: &Tensor,
    delta_g: &Tensor,
    targets: &FrameTargets,
    vgg: Option<&FrozenFeatures>,
    disc: Option<&PatchDiscriminator>,
) -> Stage1Loss {
    let l_mask = mask.sub(&targets.mask).abs().mean_all();
    let l_rgb = rgb.sub(&targets.rgb).abs().mean_all();

    // mean Euclidean normal error over GT-valid pixels
    let l_normal = if targets.mask_count > 0.0 {
        let hw: usize = targets.mask_flat.numel();
        let diff = normals.sub(&targets.normal).reshape(&[3, hw]).transpose(); // [HW,3]
        let per_px = diff.sqr().sum_rows().sqrt_eps(1e-16);
        per_px
            .mul(&targets.mask_flat)
            .sum_all()
            .mul_scalar(1.0 / targets.mask_count)
    } else {
        Tensor::scalar(0.0)
    };

    // mean squared Laplacian response of the offsets, per vertex
    let v = delta_g.shape()[0] as f64;
    let l_lap = sparse_apply(&scene.laplacian, delta_g)
        .sqr()
        .sum_all()
        .mul_scalar(1.0 / v);

    let l_vgg = match (vgg, cfg.w_vgg != 0.0) {
        (Some(f), true) => f.distance(rgb, &targets.rgb),
        _ => Tensor::scalar(0.0),
    };
    let l_gan = match (disc, cfg.w_gan != 0.0) {
        (Some(d), true) => d.generator_loss(rgb),
        _ => Tensor::scalar(0.0),
    };

    let total = l_mask
        .mul_scalar(cfg.w_mask)
        .add(&l_normal.mul_scalar(cfg.w_normal))
        .add(&l_lap.mul_scalar(cfg.w_lap))
        .add(&l_rgb.mul_scalar(cfg.w_rgb))
        .add(&l_vgg.mul_scalar(cfg.w_vgg))
        .add(&l_gan.mul_scalar(cfg.w_gan));

    Stage1Loss {
        mask: l_mask.value(),
        normal: l_normal.value(),
        lap: l_lap.value(),
        rgb: l_rgb.value(),
        vgg: l_vgg.value(),
        gan: l_gan.value(),
        total,
    }
}

/// Inference bundle reconstructed from a checkpoint.
pub struct Stage1Model {
    pub nets: Stage1Nets,
}

impl Stage1Model {
    pub fn from_checkpoint(ck: &crate::checkpoint::Checkpoint) -> Result<Stage1Model> {
        let cfg: crate::config::ExperimentConfig =
            serde_json::from_value(ck.meta["config"].clone())
                .map_err(|e| Error::InvalidInput(format!("stage1 checkpoint config: {e}")))?;
        let joint_count = ck.meta["joint_count"]
            .as_u64()
            .ok_or_else(|| Error::InvalidInput("stage1 checkpoint joint_count".into()))? as usize;
        let vertex_count = ck.meta["vertex_count"]
            .as_u64()
            .ok_or_else(|| Error::InvalidInput("stage1 checkpoint vertex_count".into()))? as usize;
        let nets = Stage1Nets::new(&cfg.stage1, joint_count, vertex_count);
        ck.load_into(&nets.named_params())?;
        Ok(Stage1Model { nets })
    }

    /// Plain posed-plus-offset geometry for one pose.
    pub fn predict_geometry(&self, scene: &Scene, pose: &PoseState) -> Result<Array2<f64>> {
        let (g, _) = self.nets.explicit_geometry(scene, pose)?;
        Ok(g.to_array2())
    }

    /// Plain appearance grid for given geometry.
    pub fn appearance(&self, scene: &Scene, g: &Array2<f64>) -> Array3<f64> {
        self.nets
            .extract_appearance(scene, &Tensor::constant(g.clone().into_dyn()))
            .to_array3()
    }

    /// Plain full render of one pose (the stage-1-only ablation path).
    pub fn render_frame(
        &self,
        scene: &Scene,
        pose: &PoseState,
        camera: &CameraModel,
    ) -> Result<(Array3<f64>, Array2<f64>, Array3<f64>)> {
        let (g, _) = self.nets.explicit_geometry(scene, pose)?;
        let a = self.nets.extract_appearance(scene, &g);
        let diag = ((camera.width * camera.width + camera.height * camera.height) as f64).sqrt();
        let (rgb, mask, normals) =
            self.nets
                .render_explicit(scene, &g, &a, camera, self.nets.cfg.sigma_factor * diag);
        Ok((rgb.to_array3(), mask.to_array2(), normals.to_array3()))
    }
}
