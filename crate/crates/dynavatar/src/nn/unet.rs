//! A small encoder/decoder over UV grids with skip connections, producing a
//! full-resolution feature grid plus a pooled latent vector from the
//! bottleneck. Used for appearance feature extraction (grid output) and for
//! motion encoding (grid = local features, latent = global feature).

use super::{normal, Act, Tensor};
use crate::tape::{concat_channels, conv2d, global_mean_pool, upsample_nearest2};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

pub struct Conv {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Kaiming-initialized conv layer (also used outside the U-Net).
    pub fn new_public(rng: &mut ChaCha8Rng, ci: usize, co: usize, k: usize, stride: usize) -> Conv {
        Conv::new(rng, ci, co, k, stride)
    }

    fn new(rng: &mut ChaCha8Rng, ci: usize, co: usize, k: usize, stride: usize) -> Conv {
        let std = (2.0 / (ci * k * k) as f64).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[co, ci, k, k]), |_| normal(rng, std));
        let b = Array1::<f64>::zeros(co).into_dyn();
        Conv {
            w: Tensor::leaf(w),
            b: Tensor::leaf(b),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv2d(x, &self.w, &self.b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UNetConfig {
    pub in_ch: usize,
    pub base: usize,
    pub levels: usize,
    pub out_ch: usize,
    pub latent_dim: usize,
}

pub struct UNetOutput {
    /// Full-resolution output grid `[out_ch, H, W]`.
    pub grid: Tensor,
    /// Bottleneck latent `[latent_dim]`.
    pub latent: Tensor,
}

pub struct UNet {
    pub cfg: UNetConfig,
    enc: Vec<Conv>,
    down: Vec<Conv>,
    latent_fc: super::Linear,
    dec: Vec<Conv>,
    head: Conv,
}

impl UNet {
    pub fn new(rng: &mut ChaCha8Rng, cfg: UNetConfig) -> UNet {
        assert!(cfg.levels >= 1);
        let c = |i: usize| cfg.base << i;
        let mut enc = Vec::new();
        let mut down = Vec::new();
        enc.push(Conv::new(rng, cfg.in_ch, c(0), 3, 1));
        for i in 1..=cfg.levels {
            down.push(Conv::new(rng, c(i - 1), c(i), 3, 2));
            enc.push(Conv::new(rng, c(i), c(i), 3, 1));
        }
        let latent_fc = super::Linear::new(rng, c(cfg.levels), cfg.latent_dim, super::Init::Kaiming);
        let mut dec = Vec::new();
        for i in (0..cfg.levels).rev() {
            dec.push(Conv::new(rng, c(i + 1) + c(i), c(i), 3, 1));
        }
        let head = Conv::new(rng, c(0), cfg.out_ch, 1, 1);
        // consume one draw so distinct nets from a shared stream never alias
        let _: f64 = rng.gen();
        UNet {
            cfg,
            enc,
            down,
            latent_fc,
            dec,
            head,
        }
    }

    /// `x` is `[in_ch, H, W]` with H and W divisible by 2^levels.
    pub fn forward(&self, x: &Tensor) -> UNetOutput {
        let shape = x.shape();
        assert_eq!(shape[0], self.cfg.in_ch, "unet input channels");
        let div = 1usize << self.cfg.levels;
        assert!(
            shape[1] % div == 0 && shape[2] % div == 0,
            "unet input {}x{} not divisible by {div}",
            shape[1],
            shape[2]
        );
        let act = Act::Silu;
        let mut skips: Vec<Tensor> = Vec::new();
        let mut h = act.apply_t(&self.enc[0].forward(x));
        skips.push(h.clone());
        for i in 1..=self.cfg.levels {
            let d = act.apply_t(&self.down[i - 1].forward(&h));
            h = act.apply_t(&self.enc[i].forward(&d));
            if i < self.cfg.levels {
                skips.push(h.clone());
            }
        }
        let latent = {
            let pooled = global_mean_pool(&h);
            let row = pooled.reshape(&[1, self.latent_fc.in_dim()]);
            self.latent_fc.forward(&row).reshape(&[self.latent_fc.out_dim()])
        };
        let mut u = h;
        for (j, i) in (0..self.cfg.levels).rev().enumerate() {
            let up = upsample_nearest2(&u);
            let cat = concat_channels(&[&up, &skips[i]]);
            u = act.apply_t(&self.dec[j].forward(&cat));
        }
        let grid = self.head.forward(&u);
        UNetOutput { grid, latent }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, c) in self.enc.iter().enumerate() {
            out.push((format!("{prefix}.enc{i}.w"), c.w.clone()));
            out.push((format!("{prefix}.enc{i}.b"), c.b.clone()));
        }
        for (i, c) in self.down.iter().enumerate() {
            out.push((format!("{prefix}.down{i}.w"), c.w.clone()));
            out.push((format!("{prefix}.down{i}.b"), c.b.clone()));
        }
        out.push((format!("{prefix}.latent.w"), self.latent_fc.w.clone()));
        out.push((format!("{prefix}.latent.b"), self.latent_fc.b.clone()));
        for (i, c) in self.dec.iter().enumerate() {
            out.push((format!("{prefix}.dec{i}.w"), c.w.clone()));
            out.push((format!("{prefix}.dec{i}.b"), c.b.clone()));
        }
        out.push((format!("{prefix}.head.w"), self.head.w.clone()));
        out.push((format!("{prefix}.head.b"), self.head.b.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use rand::SeedableRng;

    fn cfg() -> UNetConfig {
        UNetConfig {
            in_ch: 3,
            base: 4,
            levels: 2,
            out_ch: 6,
            latent_dim: 5,
        }
    }

    #[test]
    fn output_shapes_are_architectural() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::new(&mut rng, cfg());
        for content in [0.0, 1.0, -3.5] {
            let x = Tensor::constant(ArrayD::from_elem(IxDyn(&[3, 16, 16]), content));
            let out = net.forward(&x);
            assert_eq!(out.grid.shape(), vec![6, 16, 16]);
            assert_eq!(out.latent.shape(), vec![5]);
        }
    }

    #[test]
    fn unet_param_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = UNet::new(
            &mut rng,
            UNetConfig {
                in_ch: 2,
                base: 2,
                levels: 1,
                out_ch: 2,
                latent_dim: 3,
            },
        );
        let x = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[2, 4, 4]), |ix| {
            (ix[0] as f64 * 0.3 + ix[1] as f64 * 0.11 - ix[2] as f64 * 0.07).sin()
        }));
        let mut named = Vec::new();
        net.named_params("u", &mut named);
        let params: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
        let e = grad_check(
            || {
                let out = net.forward(&x);
                out.grid.sum_all().add(&out.latent.sqr().sum_all())
            },
            &params,
            1e-5,
        );
        assert!(e < 1e-6, "unet fd mismatch: {e}");
    }
}
