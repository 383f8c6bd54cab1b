//! Image ops for the small U-Nets: 2-d convolution (via im2col), nearest
//! upsampling, global pooling and channel concatenation. Layout is CHW.

use super::Tensor;
use ndarray::{Array2, Array3, ArrayD, ArrayView3, Axis, Ix3};

fn view3(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected CHW tensor")
}

fn im2col(
    x: &ArrayView3<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let mut col = Array2::<f64>::zeros((ci * kh * kw, ho * wo));
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let mut r = col.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        r[oy * wo + ox] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    dcol: &Array2<f64>,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array3<f64> {
    let mut dx = Array3::<f64>::zeros((ci, h, w));
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let r = dcol.row(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[c, iy as usize, ix as usize]] += r[oy * wo + ox];
                    }
                }
            }
        }
    }
    dx
}

/// 2-d convolution: `x [Ci,H,W]`, `weight [Co,Ci,kh,kw]`, `bias [Co]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (co, ci, kh, kw) = {
        let w = weight.data();
        let s = w.shape().to_vec();
        (s[0], s[1], s[2], s[3])
    };
    let (h, w_in) = {
        let xd = x.data();
        let v = view3(&xd);
        assert_eq!(v.dim().0, ci, "conv2d: channel mismatch");
        (v.dim().1, v.dim().2)
    };
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w_in + 2 * pad - kw) / stride + 1;

    let out = {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        let col = im2col(&view3(&xd), kh, kw, stride, pad, ho, wo);
        let w_mat = wd
            .view()
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        let mut out_mat = w_mat.dot(&col);
        for (mut r, b) in out_mat.rows_mut().into_iter().zip(bd.iter()) {
            r.mapv_inplace(|v| v + b);
        }
        out_mat.into_shape_with_order((co, ho, wo)).unwrap().into_dyn()
    };

    Tensor::from_op(
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |node, g| {
            let xd = node.parents[0].data();
            let wd = node.parents[1].data();
            let xv = view3(&xd);
            let (_, h, w_in) = xv.dim();
            let g_mat = g
                .view()
                .into_shape_with_order((co, ho * wo))
                .unwrap()
                .to_owned();
            // reconstruct the column matrix rather than caching it
            let col = im2col(&xv, kh, kw, stride, pad, ho, wo);
            let dw = g_mat.dot(&col.t());
            let db = g_mat.sum_axis(Axis(1));
            let w_mat = wd.view().into_shape_with_order((co, ci * kh * kw)).unwrap();
            let dcol = w_mat.t().dot(&g_mat);
            let dx = col2im(&dcol, ci, h, w_in, kh, kw, stride, pad, ho, wo);
            vec![
                Some(dx.into_dyn()),
                Some(dw.into_shape_with_order((co, ci, kh, kw)).unwrap().into_dyn()),
                Some(db.into_dyn()),
            ]
        }),
    )
}

/// Nearest-neighbour 2x upsampling of a CHW tensor.
pub fn upsample_nearest2(x: &Tensor) -> Tensor {
    let out = {
        let xd = x.data();
        let v = view3(&xd);
        let (c, h, w) = v.dim();
        let mut o = Array3::<f64>::zeros((c, 2 * h, 2 * w));
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let val = v[[ci, y, xx]];
                    o[[ci, 2 * y, 2 * xx]] = val;
                    o[[ci, 2 * y, 2 * xx + 1]] = val;
                    o[[ci, 2 * y + 1, 2 * xx]] = val;
                    o[[ci, 2 * y + 1, 2 * xx + 1]] = val;
                }
            }
        }
        o.into_dyn()
    };
    Tensor::from_op(
        out,
        vec![x.clone()],
        Box::new(|node, g| {
            let p = node.parents[0].data();
            let (c, h, w) = view3(&p).dim();
            let gv = view3(g);
            let mut dx = Array3::<f64>::zeros((c, h, w));
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        dx[[ci, y, xx]] = gv[[ci, 2 * y, 2 * xx]]
                            + gv[[ci, 2 * y, 2 * xx + 1]]
                            + gv[[ci, 2 * y + 1, 2 * xx]]
                            + gv[[ci, 2 * y + 1, 2 * xx + 1]];
                    }
                }
            }
            vec![Some(dx.into_dyn())]
        }),
    )
}

/// Mean over the spatial extent: `[C,H,W] -> [C]`.
pub fn global_mean_pool(x: &Tensor) -> Tensor {
    let out = {
        let xd = x.data();
        let v = view3(&xd);
        let (c, h, w) = v.dim();
        let mut o = ndarray::Array1::<f64>::zeros(c);
        for ci in 0..c {
            o[ci] = v.index_axis(Axis(0), ci).sum() / (h * w) as f64;
        }
        o.into_dyn()
    };
    Tensor::from_op(
        out,
        vec![x.clone()],
        Box::new(|node, g| {
            let p = node.parents[0].data();
            let (c, h, w) = view3(&p).dim();
            let inv = 1.0 / (h * w) as f64;
            let mut dx = Array3::<f64>::zeros((c, h, w));
            for ci in 0..c {
                dx.index_axis_mut(Axis(0), ci).fill(g[ci] * inv);
            }
            vec![Some(dx.into_dyn())]
        }),
    )
}

/// Concatenate CHW tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let datas: Vec<_> = parts.iter().map(|t| t.data().clone()).collect();
    let views: Vec<_> = datas.iter().map(|d| view3(d)).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("concat_channels shape mismatch");
    let chans: Vec<usize> = views.iter().map(|v| v.dim().0).collect();
    Tensor::from_op(
        out.into_dyn(),
        parts.iter().map(|t| (*t).clone()).collect(),
        Box::new(move |_, g| {
            let gv = view3(g);
            let mut out = Vec::with_capacity(chans.len());
            let mut c0 = 0;
            for c in &chans {
                out.push(Some(gv.slice(ndarray::s![c0..c0 + c, .., ..]).to_owned().into_dyn()));
                c0 += c;
            }
            out
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use ndarray::{ArrayD, IxDyn};

    fn randish(shape: &[usize], seed: u64, scale: f64) -> ArrayD<f64> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0xDEAD);
        ArrayD::from_shape_fn(IxDyn(shape), |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        })
    }

    #[test]
    fn conv2d_matches_direct_convolution() {
        let x = Tensor::constant(randish(&[2, 5, 6], 1, 1.0));
        let w = Tensor::constant(randish(&[3, 2, 3, 3], 2, 1.0));
        let b = Tensor::constant(randish(&[3], 3, 1.0));
        let y = conv2d(&x, &w, &b, 1, 1);
        assert_eq!(y.shape(), vec![3, 5, 6]);
        // direct loop oracle at one output location
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        let (oy, ox, oc) = (2usize, 4usize, 1usize);
        let mut acc = bd[oc];
        for c in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = oy + ky - 1;
                    let ix = ox as isize + kx as isize - 1;
                    if ix < 0 || ix >= 6 {
                        continue;
                    }
                    acc += xd[[c, iy, ix as usize]] * wd[[oc, c, ky, kx]];
                }
            }
        }
        let got = y.data()[[oc, oy, ox]];
        assert!((acc - got).abs() < 1e-12, "{acc} vs {got}");
    }

    #[test]
    fn conv_stack_grads_match_fd() {
        let x = Tensor::leaf(randish(&[2, 8, 8], 4, 0.7));
        let w1 = Tensor::leaf(randish(&[3, 2, 3, 3], 5, 0.5));
        let b1 = Tensor::leaf(randish(&[3], 6, 0.2));
        let w2 = Tensor::leaf(randish(&[2, 3, 3, 3], 7, 0.5));
        let b2 = Tensor::leaf(randish(&[2], 8, 0.2));
        let params = [x.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone()];
        let e = grad_check(
            || {
                let h = conv2d(&x, &w1, &b1, 2, 1).silu(); // 3x4x4
                let up = upsample_nearest2(&h); // 3x8x8
                let h2 = conv2d(&up, &w2, &b2, 1, 1).tanh(); // 2x8x8
                let pooled = global_mean_pool(&concat_channels(&[&h2, &x]));
                pooled.reshape(&[1, 4]).sqr().sum_all()
            },
            &params,
            1e-5,
        );
        assert!(e < 1e-7, "conv stack fd mismatch: {e}");
    }
}
