//! Small neural building blocks on the tape: linear layers, MLPs (optionally
//! with a mid-network skip), positional encoding, and plain `f64` evaluation
//! mirrors for hot non-differentiated paths (sphere marching, animation).
//!
//! Besides the usual forward pass, [`Mlp::forward_tangent`] propagates
//! directional derivatives of the *input* through the network as tape
//! tensors. That is how spatial SDF gradients stay differentiable with
//! respect to the parameters: the eikonal loss and IDR normals backprop
//! through the tangent computation itself.

mod adam;
mod unet;

pub use adam::Adam;
pub use unet::{Conv, UNet, UNetConfig, UNetOutput};

use crate::tape::{concat_cols, Tensor};
use ndarray::{Array1, Array2, ArrayD, ArrayView2, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Pointwise activation, applied identically on tape and plain paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Identity,
    Sigmoid,
    Tanh,
    Silu,
    /// Softplus with sharpness beta.
    Softplus(f64),
    Sin,
}

impl Act {
    pub fn apply_t(&self, x: &Tensor) -> Tensor {
        match self {
            Act::Identity => x.clone(),
            Act::Sigmoid => x.sigmoid(),
            Act::Tanh => x.tanh(),
            Act::Silu => x.silu(),
            Act::Softplus(b) => x.softplus(*b),
            Act::Sin => x.sin(),
        }
    }

    /// Derivative at the preactivation, as a tape expression.
    pub fn deriv_t(&self, z: &Tensor) -> Tensor {
        match self {
            Act::Identity => Tensor::constant(ArrayD::ones(z.data().raw_dim())),
            Act::Sigmoid => {
                let s = z.sigmoid();
                s.mul(&s.neg().add_scalar(1.0))
            }
            Act::Tanh => z.tanh().sqr().neg().add_scalar(1.0),
            Act::Silu => {
                let s = z.sigmoid();
                let one_minus = s.neg().add_scalar(1.0);
                s.add(&z.mul(&s).mul(&one_minus))
            }
            Act::Softplus(b) => z.mul_scalar(*b).sigmoid(),
            Act::Sin => z.cos(),
        }
    }

    pub fn apply_f(&self, x: f64) -> f64 {
        match self {
            Act::Identity => x,
            Act::Sigmoid => crate::tape::sigmoid_f(x),
            Act::Tanh => x.tanh(),
            Act::Silu => x * crate::tape::sigmoid_f(x),
            Act::Softplus(b) => crate::tape::softplus_f(x, *b),
            Act::Sin => x.sin(),
        }
    }

    pub fn deriv_f(&self, x: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Sigmoid => {
                let s = crate::tape::sigmoid_f(x);
                s * (1.0 - s)
            }
            Act::Tanh => 1.0 - x.tanh().powi(2),
            Act::Silu => {
                let s = crate::tape::sigmoid_f(x);
                s + x * s * (1.0 - s)
            }
            Act::Softplus(b) => crate::tape::sigmoid_f(b * x),
            Act::Sin => x.cos(),
        }
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// N(0, sqrt(2 / fan_in)), zero bias.
    Kaiming,
    /// All-zero weights and bias (residual heads start at the identity).
    Zeros,
    /// SDF geometric init, hidden layer: N(0, sqrt(2 / fan_out)), zero bias.
    GeomHidden,
    /// SDF geometric init, output layer: weights ~ sqrt(pi / fan_in) with a
    /// tiny jitter, bias = -radius, so the initial field is ~ |x| - radius.
    GeomLast { radius: f64 },
    /// SDF geometric init, first layer: N(0, sqrt(2 / fan_out)) on the first
    /// `raw_dims` input columns, zeros elsewhere (encoded/conditioning
    /// columns start silent).
    GeomFirst { raw_dims: usize },
}

/// Fully connected layer; weights stored `[in, out]`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, init: Init) -> Linear {
        let mut w = Array2::<f64>::zeros((in_dim, out_dim));
        let mut b = Array1::<f64>::zeros(out_dim);
        match init {
            Init::Kaiming => {
                let std = (2.0 / in_dim as f64).sqrt();
                w.mapv_inplace(|_| normal(rng, std));
            }
            Init::Zeros => {}
            Init::GeomHidden => {
                let std = (2.0 / out_dim as f64).sqrt();
                w.mapv_inplace(|_| normal(rng, std));
            }
            Init::GeomLast { radius } => {
                let mean = (std::f64::consts::PI / in_dim as f64).sqrt();
                w.mapv_inplace(|_| mean + normal(rng, 1e-5));
                b.fill(-radius);
            }
            Init::GeomFirst { raw_dims } => {
                let std = (2.0 / out_dim as f64).sqrt();
                for i in 0..in_dim.min(raw_dims) {
                    for j in 0..out_dim {
                        w[[i, j]] = normal(rng, std);
                    }
                }
            }
        }
        Linear {
            w: Tensor::leaf(w.into_dyn()),
            b: Tensor::leaf(b.into_dyn()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.w).add_row(&self.b)
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Multi-layer perceptron. `skip_at = Some(i)` concatenates the original
/// input to layer i's input, scaled by 1/sqrt(2) (IDR-style mid skip).
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Act,
    pub out_act: Act,
    pub skip_at: Option<usize>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`. Hidden layers use `act`; the final layer
    /// uses `out_act`. All layers Kaiming-initialized unless overridden later.
    pub fn new(rng: &mut ChaCha8Rng, dims: &[usize], act: Act, out_act: Act, skip_at: Option<usize>) -> Mlp {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let mut in_dim = dims[i];
            if Some(i) == skip_at {
                in_dim += dims[0];
            }
            layers.push(Linear::new(rng, in_dim, dims[i + 1], Init::Kaiming));
        }
        Mlp {
            layers,
            act,
            out_act,
            skip_at,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == self.skip_at {
                h = concat_cols(&[&h, x]).mul_scalar(std::f64::consts::FRAC_1_SQRT_2);
            }
            let z = layer.forward(&h);
            h = if i + 1 == n {
                self.out_act.apply_t(&z)
            } else {
                self.act.apply_t(&z)
            };
        }
        h
    }

    /// Forward pass together with directional derivatives of the input.
    ///
    /// `tx[k]` is the derivative of the input rows along direction k (same
    /// shape as `x`). Returns the output and its derivative along each
    /// direction, all on the tape.
    pub fn forward_tangent(&self, x: &Tensor, tx: &[Tensor]) -> (Tensor, Vec<Tensor>) {
        let mut h = x.clone();
        let mut th: Vec<Tensor> = tx.to_vec();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == self.skip_at {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                h = concat_cols(&[&h, x]).mul_scalar(s);
                th = th
                    .iter()
                    .zip(tx.iter())
                    .map(|(t, t0)| concat_cols(&[t, t0]).mul_scalar(s))
                    .collect();
            }
            let z = h.matmul(&layer.w).add_row(&layer.b);
            let tz: Vec<Tensor> = th.iter().map(|t| t.matmul(&layer.w)).collect();
            let act = if i + 1 == n { self.out_act } else { self.act };
            let d = act.deriv_t(&z);
            h = act.apply_t(&z);
            th = tz.iter().map(|t| d.mul(t)).collect();
        }
        (h, th)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.l{i}.w"), l.w.clone()));
            out.push((format!("{prefix}.l{i}.b"), l.b.clone()));
        }
    }

    pub fn snapshot(&self) -> MlpEval {
        MlpEval {
            ws: self
                .layers
                .iter()
                .map(|l| {
                    l.w.data()
                        .clone()
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap()
                })
                .collect(),
            bs: self
                .layers
                .iter()
                .map(|l| {
                    l.b.data()
                        .clone()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap()
                })
                .collect(),
            act: self.act,
            out_act: self.out_act,
            skip_at: self.skip_at,
        }
    }
}

/// Plain `f64` copy of an [`Mlp`] for parallel, non-differentiated evaluation.
#[derive(Clone)]
pub struct MlpEval {
    pub ws: Vec<Array2<f64>>,
    pub bs: Vec<Array1<f64>>,
    pub act: Act,
    pub out_act: Act,
    pub skip_at: Option<usize>,
}

impl MlpEval {
    pub fn eval(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let (y, _) = self.eval_tangent(x, &[]);
        y
    }

    /// Plain-math twin of [`Mlp::forward_tangent`].
    pub fn eval_tangent(
        &self,
        x: &ArrayView2<'_, f64>,
        tx: &[Array2<f64>],
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut h = x.to_owned();
        let mut th: Vec<Array2<f64>> = tx.to_vec();
        let n = self.ws.len();
        for i in 0..n {
            if Some(i) == self.skip_at {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                h = concat2(&h, x) * s;
                th = th.iter().zip(tx.iter()).map(|(t, t0)| concat2(t, &t0.view()) * s).collect();
            }
            let mut z = h.dot(&self.ws[i]);
            for (mut r, _) in z.rows_mut().into_iter().zip(0..) {
                r += &self.bs[i];
            }
            let tz: Vec<Array2<f64>> = th.iter().map(|t| t.dot(&self.ws[i])).collect();
            let act = if i + 1 == n { self.out_act } else { self.act };
            let d = z.mapv(|v| act.deriv_f(v));
            h = z.mapv(|v| act.apply_f(v));
            th = tz.iter().map(|t| t * &d).collect();
        }
        (h, th)
    }
}

fn concat2(a: &Array2<f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).unwrap()
}

/// Positional encoding `[x, sin(2^k x), cos(2^k x)]_k` along columns.
pub fn posenc(x: &Tensor, octaves: usize) -> Tensor {
    let mut parts: Vec<Tensor> = vec![x.clone()];
    for k in 0..octaves {
        let f = (1u64 << k) as f64;
        let xs = x.mul_scalar(f);
        parts.push(xs.sin());
        parts.push(xs.cos());
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    concat_cols(&refs)
}

/// Positional encoding with input tangents carried through.
pub fn posenc_with_tangent(x: &Tensor, tx: &[Tensor], octaves: usize) -> (Tensor, Vec<Tensor>) {
    let enc = posenc(x, octaves);
    let mut tangents = Vec::with_capacity(tx.len());
    for t in tx {
        let mut parts: Vec<Tensor> = vec![t.clone()];
        for k in 0..octaves {
            let f = (1u64 << k) as f64;
            let xs = x.mul_scalar(f);
            parts.push(xs.cos().mul(t).mul_scalar(f));
            parts.push(xs.sin().mul(t).mul_scalar(-f));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        tangents.push(concat_cols(&refs));
    }
    (enc, tangents)
}

/// Plain positional encoding.
pub fn posenc_f(x: &ArrayView2<'_, f64>, octaves: usize) -> Array2<f64> {
    let (enc, _) = posenc_with_tangent_f(x, &[], octaves);
    enc
}

/// Plain positional encoding with tangents.
pub fn posenc_with_tangent_f(
    x: &ArrayView2<'_, f64>,
    tx: &[Array2<f64>],
    octaves: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (n, d) = x.dim();
    let out_d = d * (1 + 2 * octaves);
    let mut enc = Array2::<f64>::zeros((n, out_d));
    enc.slice_mut(ndarray::s![.., 0..d]).assign(x);
    for k in 0..octaves {
        let f = (1u64 << k) as f64;
        let base = d * (1 + 2 * k);
        for i in 0..n {
            for j in 0..d {
                enc[[i, base + j]] = (f * x[[i, j]]).sin();
                enc[[i, base + d + j]] = (f * x[[i, j]]).cos();
            }
        }
    }
    let tangents = tx
        .iter()
        .map(|t| {
            let mut te = Array2::<f64>::zeros((n, out_d));
            te.slice_mut(ndarray::s![.., 0..d]).assign(t);
            for k in 0..octaves {
                let f = (1u64 << k) as f64;
                let base = d * (1 + 2 * k);
                for i in 0..n {
                    for j in 0..d {
                        te[[i, base + j]] = f * (f * x[[i, j]]).cos() * t[[i, j]];
                        te[[i, base + d + j]] = -f * (f * x[[i, j]]).sin() * t[[i, j]];
                    }
                }
            }
            te
        })
        .collect();
    (enc, tangents)
}

pub(crate) fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller keeps us independent of distribution-crate implementation
    // details; bit-stable for a fixed ChaCha stream.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Convenience: leaf tensor of zeros.
pub fn zeros_leaf(shape: &[usize]) -> Tensor {
    Tensor::leaf(ArrayD::zeros(IxDyn(shape)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use ndarray::arr2;
    use rand::SeedableRng;

    #[test]
    fn mlp_forward_deterministic_and_param_grads_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::new(&mut rng, &[3, 16, 16, 2], Act::Softplus(8.0), Act::Identity, Some(1));
        let x = Tensor::constant(arr2(&[[0.3, -0.2, 0.5], [0.1, 0.9, -0.4]]).into_dyn());
        let y1 = mlp.forward(&x);
        let y2 = mlp.forward(&x);
        assert_eq!(y1.data().as_slice().unwrap(), y2.data().as_slice().unwrap());

        let mut params = Vec::new();
        mlp.named_params("m", &mut params);
        let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let e = grad_check(|| mlp.forward(&x).sqr().mean_all(), &tensors, 1e-5);
        assert!(e < 1e-6, "mlp param grads: {e}");
    }

    #[test]
    fn tangent_matches_input_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&mut rng, &[3, 12, 12, 1], Act::Softplus(6.0), Act::Identity, None);
        let x0 = arr2(&[[0.21, -0.4, 0.33], [-0.5, 0.11, 0.02]]);
        let x = Tensor::constant(x0.clone().into_dyn());
        // tangent along each coordinate axis
        for k in 0..3 {
            let mut dir = Array2::<f64>::zeros((2, 3));
            dir.column_mut(k).fill(1.0);
            let tx = Tensor::constant(dir.clone().into_dyn());
            let (_, tys) = mlp.forward_tangent(&x, &[tx]);
            let h = 1e-6;
            let xp = Tensor::constant((&x0 + &(h * &dir)).into_dyn());
            let xm = Tensor::constant((&x0 - &(h * &dir)).into_dyn());
            let fd = (&*mlp.forward(&xp).data() - &*mlp.forward(&xm).data()) / (2.0 * h);
            for (a, b) in tys[0].data().iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-6, "tangent {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tangent_computation_is_itself_differentiable() {
        // The eikonal path: a loss on the spatial gradient must have correct
        // parameter gradients.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&mut rng, &[2, 10, 1], Act::Softplus(5.0), Act::Identity, None);
        let x = Tensor::constant(arr2(&[[0.4, -0.1], [0.0, 0.7], [-0.3, -0.6]]).into_dyn());
        let mut params = Vec::new();
        mlp.named_params("m", &mut params);
        let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let e = grad_check(
            || {
                let tx0 = Tensor::constant(arr2(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).into_dyn());
                let tx1 = Tensor::constant(arr2(&[[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).into_dyn());
                let (_, t) = mlp.forward_tangent(&x, &[tx0, tx1]);
                let g2 = t[0].sqr().add(&t[1].sqr());
                // (||grad|| - 1)^2, the eikonal shape
                g2.sqrt_eps(1e-12).add_scalar(-1.0).sqr().mean_all()
            },
            &tensors,
            1e-5,
        );
        assert!(e < 1e-6, "eikonal-style second-order grads: {e}");
    }

    #[test]
    fn posenc_tangent_matches_fd() {
        let x0 = arr2(&[[0.37, -0.82, 0.15]]);
        let x = Tensor::constant(x0.clone().into_dyn());
        let mut dir = Array2::<f64>::zeros((1, 3));
        dir[[0, 1]] = 1.0;
        let t = Tensor::constant(dir.clone().into_dyn());
        let (_, tg) = posenc_with_tangent(&x, &[t], 4);
        let h = 1e-6;
        let ep = posenc(&Tensor::constant((&x0 + &(h * &dir)).into_dyn()), 4);
        let em = posenc(&Tensor::constant((&x0 - &(h * &dir)).into_dyn()), 4);
        let fd = (&*ep.data() - &*em.data()) / (2.0 * h);
        for (a, b) in tg[0].data().iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        // plain path agrees with tape path
        let (enc_f, tg_f) = posenc_with_tangent_f(&x0.view(), &[dir.clone()], 4);
        let enc_t = posenc(&x, 4);
        for (a, b) in enc_f.iter().zip(enc_t.data().iter()) {
            assert_eq!(a, b);
        }
        for (a, b) in tg_f[0].iter().zip(tg[0].data().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn snapshot_eval_matches_tape_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut rng, &[4, 20, 20, 3], Act::Silu, Act::Sigmoid, Some(1));
        let x = arr2(&[[0.2, -0.7, 1.1, 0.05], [0.0, 0.0, 0.0, 0.0]]);
        let y_t = mlp.forward(&Tensor::constant(x.clone().into_dyn()));
        let y_f = mlp.snapshot().eval(&x.view());
        for (a, b) in y_t.data().iter().zip(y_f.iter()) {
            assert_eq!(a, b, "tape and plain paths must agree bitwise");
        }
    }
}
