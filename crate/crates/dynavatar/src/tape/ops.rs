//! Core tensor ops: elementwise math, matrix products, reductions, shaping.

use super::{Node, Tensor};
use ndarray::{Array1, Array2, ArrayD, ArrayViewD, Axis, Ix1, Ix2, IxDyn};

fn view2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-d tensor")
}

fn view1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected 1-d tensor")
}

fn same_shape(a: &ArrayViewD<'_, f64>, b: &ArrayViewD<'_, f64>) {
    assert_eq!(a.shape(), b.shape(), "elementwise op shape mismatch");
}

impl Tensor {
    fn unary(&self, out: ArrayD<f64>, back: impl Fn(&Node, &ArrayD<f64>) -> ArrayD<f64> + 'static) -> Tensor {
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |node, g| vec![Some(back(node, g))]),
        )
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        same_shape(&self.data().view(), &other.data().view());
        let out = &*self.data() + &*other.data();
        Tensor::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        same_shape(&self.data().view(), &other.data().view());
        let out = &*self.data() - &*other.data();
        Tensor::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.clone()), Some(-g)]),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        same_shape(&self.data().view(), &other.data().view());
        let out = &*self.data() * &*other.data();
        Tensor::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].data();
                let b = node.parents[1].data();
                vec![Some(g * &*b), Some(g * &*a)]
            }),
        )
    }

    /// Elementwise division; caller guarantees the denominator stays away
    /// from zero (losses divide by counts, norms carry an epsilon).
    pub fn div(&self, other: &Tensor) -> Tensor {
        same_shape(&self.data().view(), &other.data().view());
        let out = &*self.data() / &*other.data();
        Tensor::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].data();
                let b = node.parents[1].data();
                let ga = g / &*b;
                let gb = -(g * &*a) / (&*b * &*b);
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary(-&*self.data(), |_, g| -g)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(&*self.data() + c, |_, g| g.clone())
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(&*self.data() * c, move |_, g| g * c)
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = self.data().mapv(sigmoid_f);
        self.unary(out, |node, g| {
            let y = node.data.borrow();
            g * &y.mapv(|y| y * (1.0 - y))
        })
    }

    pub fn tanh(&self) -> Tensor {
        let out = self.data().mapv(f64::tanh);
        self.unary(out, |node, g| {
            let y = node.data.borrow();
            g * &y.mapv(|y| 1.0 - y * y)
        })
    }

    /// Softplus with sharpness `beta`: `ln(1 + exp(beta x)) / beta`.
    pub fn softplus(&self, beta: f64) -> Tensor {
        let out = self.data().mapv(|x| softplus_f(x, beta));
        self.unary(out, move |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(|x| sigmoid_f(beta * x))
        })
    }

    /// SiLU / swish: `x * sigmoid(x)`. Smooth everywhere, which keeps
    /// finite-difference gradient checks clean.
    pub fn silu(&self) -> Tensor {
        let out = self.data().mapv(|x| x * sigmoid_f(x));
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(|x| {
                let s = sigmoid_f(x);
                s + x * s * (1.0 - s)
            })
        })
    }

    pub fn sin(&self) -> Tensor {
        let out = self.data().mapv(f64::sin);
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(f64::cos)
        })
    }

    pub fn cos(&self) -> Tensor {
        let out = self.data().mapv(f64::cos);
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(|x| -x.sin())
        })
    }

    pub fn exp(&self) -> Tensor {
        let out = self.data().mapv(f64::exp);
        self.unary(out, |node, g| {
            let y = node.data.borrow();
            g * &*y
        })
    }

    /// Natural log; caller keeps the argument positive.
    pub fn ln(&self) -> Tensor {
        let out = self.data().mapv(f64::ln);
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g / &*x
        })
    }

    /// |x| with subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        let out = self.data().mapv(f64::abs);
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
    }

    pub fn sqr(&self) -> Tensor {
        let out = self.data().mapv(|x| x * x);
        self.unary(out, |node, g| {
            let x = node.parents[0].data();
            g * &x.mapv(|x| 2.0 * x)
        })
    }

    /// sqrt with an epsilon floor inside: `sqrt(x + eps)`.
    pub fn sqrt_eps(&self, eps: f64) -> Tensor {
        let out = self.data().mapv(|x| (x + eps).sqrt());
        self.unary(out, move |node, g| {
            let y = node.data.borrow();
            g * &y.mapv(|y| 0.5 / y)
        })
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().sum();
        self.unary(ArrayD::from_elem(IxDyn(&[]), s), |node, g| {
            let shape = node.parents[0].data().raw_dim();
            ArrayD::from_elem(shape, g[[]])
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Row sums of a 2-d tensor: `[m, n] -> [m]`.
    pub fn sum_rows(&self) -> Tensor {
        let a = self.data();
        let v = view2(&a).sum_axis(Axis(1)).into_dyn();
        drop(a);
        self.unary(v, |node, g| {
            let p = node.parents[0].data();
            let (m, n) = view2(&p).dim();
            let gv = view1(g);
            let mut out = Array2::<f64>::zeros((m, n));
            for i in 0..m {
                out.row_mut(i).fill(gv[i]);
            }
            out.into_dyn()
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let out = {
            let a = self.data();
            let b = other.data();
            view2(&a).dot(&view2(&b)).into_dyn()
        };
        Tensor::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].data();
                let b = node.parents[1].data();
                let gm = view2(g);
                let ga = gm.dot(&view2(&b).t()).into_dyn();
                let gb = view2(&a).t().dot(&gm).into_dyn();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Add a length-n row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        let out = {
            let a = self.data();
            let r = row.data();
            (&view2(&a) + &view1(&r)).into_dyn()
        };
        Tensor::from_op(
            out,
            vec![self.clone(), row.clone()],
            Box::new(|_, g| {
                let gm = view2(g);
                let gr = gm.sum_axis(Axis(0)).into_dyn();
                vec![Some(g.clone()), Some(gr)]
            }),
        )
    }

    /// Divide each row i of an `[m, n]` matrix by `col[i]`.
    pub fn div_col(&self, col: &Tensor) -> Tensor {
        let out = {
            let a = self.data();
            let c = col.data();
            let mut o = view2(&a).to_owned();
            for (mut r, d) in o.rows_mut().into_iter().zip(view1(&c).iter()) {
                r.mapv_inplace(|v| v / d);
            }
            o.into_dyn()
        };
        Tensor::from_op(
            out,
            vec![self.clone(), col.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].data();
                let c = node.parents[1].data();
                let am = view2(&a);
                let cv = view1(&c);
                let gm = view2(g);
                let mut ga = gm.to_owned();
                let mut gc = Array1::<f64>::zeros(cv.len());
                for i in 0..am.nrows() {
                    let d = cv[i];
                    for j in 0..am.ncols() {
                        ga[[i, j]] /= d;
                        gc[i] -= gm[[i, j]] * am[[i, j]] / (d * d);
                    }
                }
                vec![Some(ga.into_dyn()), Some(gc.into_dyn())]
            }),
        )
    }

    /// Transpose a 2-d tensor.
    pub fn transpose(&self) -> Tensor {
        fn tr(a: ndarray::ArrayView2<'_, f64>) -> ArrayD<f64> {
            let t = a.t();
            let std = t.as_standard_layout();
            std.to_owned().into_dyn()
        }
        let out = {
            let a = self.data();
            tr(view2(&a))
        };
        self.unary(out, |_, g| tr(view2(g)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let out = self
            .data()
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.unary(out, |node, g| {
            let shape = node.parents[0].data().raw_dim();
            g.as_standard_layout()
                .to_owned()
                .into_shape_with_order(shape)
                .unwrap()
        })
    }

    /// Columns `[start, end)` of a 2-d tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let out = {
            let a = self.data();
            view2(&a).slice(ndarray::s![.., start..end]).to_owned().into_dyn()
        };
        self.unary(out, move |node, g| {
            let p = node.parents[0].data();
            let (m, n) = view2(&p).dim();
            let mut full = Array2::<f64>::zeros((m, n));
            full.slice_mut(ndarray::s![.., start..end]).assign(&view2(g));
            full.into_dyn()
        })
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let out = {
            let a = self.data();
            let am = view2(&a);
            let mut o = Array2::<f64>::zeros((idx.len(), am.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                o.row_mut(k).assign(&am.row(i));
            }
            o.into_dyn()
        };
        let idx = idx.to_vec();
        self.unary(out, move |node, g| {
            let p = node.parents[0].data();
            let (m, n) = view2(&p).dim();
            let gm = view2(g);
            let mut full = Array2::<f64>::zeros((m, n));
            for (k, &i) in idx.iter().enumerate() {
                let mut r = full.row_mut(i);
                r += &gm.row(k);
            }
            full.into_dyn()
        })
    }
}

/// Concatenate 2-d tensors along columns.
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let datas: Vec<_> = parts.iter().map(|t| t.data().clone()).collect();
    let views: Vec<_> = datas.iter().map(|d| view2(d)).collect();
    let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
    let widths: Vec<usize> = views.iter().map(|v| v.ncols()).collect();
    Tensor::from_op(
        out.into_dyn(),
        parts.iter().map(|t| (*t).clone()).collect(),
        Box::new(move |_, g| {
            let gm = view2(g);
            let mut out = Vec::with_capacity(widths.len());
            let mut c = 0;
            for w in &widths {
                out.push(Some(gm.slice(ndarray::s![.., c..c + w]).to_owned().into_dyn()));
                c += w;
            }
            out
        }),
    )
}

/// Concatenate 2-d tensors along rows.
pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let datas: Vec<_> = parts.iter().map(|t| t.data().clone()).collect();
    let views: Vec<_> = datas.iter().map(|d| view2(d)).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
    let heights: Vec<usize> = views.iter().map(|v| v.nrows()).collect();
    Tensor::from_op(
        out.into_dyn(),
        parts.iter().map(|t| (*t).clone()).collect(),
        Box::new(move |_, g| {
            let gm = view2(g);
            let mut out = Vec::with_capacity(heights.len());
            let mut r = 0;
            for h in &heights {
                out.push(Some(gm.slice(ndarray::s![r..r + h, ..]).to_owned().into_dyn()));
                r += h;
            }
            out
        }),
    )
}

/// Apply a fixed sparse linear map to the rows of an `[in_rows, c]` tensor.
pub fn sparse_apply(map: &std::rc::Rc<super::SparseMap>, x: &Tensor) -> Tensor {
    let out = {
        let d = x.data();
        map.apply(&view2(&d)).into_dyn()
    };
    let m = map.clone();
    Tensor::from_op(
        out,
        vec![x.clone()],
        Box::new(move |_, g| vec![Some(m.apply_transpose(&view2(g)).into_dyn())]),
    )
}

/// Numerically stable logistic sigmoid (shared by tape ops and plain evals).
pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus with sharpness `beta`.
pub fn softplus_f(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    (bx.max(0.0) + (-bx.abs()).exp().ln_1p()) / beta
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tensor};
    use super::*;
    use ndarray::{arr1, arr2};

    fn randish(shape: &[usize], seed: u64, scale: f64, offset: f64) -> ArrayD<f64> {
        let mut s = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(1);
        ArrayD::from_shape_fn(IxDyn(shape), |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale + offset
        })
    }

    #[test]
    fn elementwise_grads_match_fd() {
        let x = Tensor::leaf(randish(&[3, 4], 7, 0.9, 0.0));
        let w = Tensor::constant(randish(&[3, 4], 8, 1.0, 0.0));
        let cases: Vec<(&str, Box<dyn Fn() -> Tensor>)> = vec![
            ("sigmoid", Box::new({ let x = x.clone(); let w = w.clone(); move || x.sigmoid().mul(&w).sum_all() })),
            ("tanh", Box::new({ let x = x.clone(); let w = w.clone(); move || x.tanh().mul(&w).sum_all() })),
            ("softplus", Box::new({ let x = x.clone(); let w = w.clone(); move || x.softplus(3.0).mul(&w).sum_all() })),
            ("silu", Box::new({ let x = x.clone(); let w = w.clone(); move || x.silu().mul(&w).sum_all() })),
            ("sin", Box::new({ let x = x.clone(); let w = w.clone(); move || x.sin().mul(&w).sum_all() })),
            ("cos", Box::new({ let x = x.clone(); let w = w.clone(); move || x.cos().mul(&w).sum_all() })),
            ("exp", Box::new({ let x = x.clone(); let w = w.clone(); move || x.exp().mul(&w).sum_all() })),
            ("sqr", Box::new({ let x = x.clone(); let w = w.clone(); move || x.sqr().mul(&w).sum_all() })),
            ("sqrt_eps", Box::new({ let x = x.clone(); let w = w.clone(); move || x.sqr().sqrt_eps(1e-3).mul(&w).sum_all() })),
            ("neg_div", Box::new({ let x = x.clone(); let w = w.clone(); move || x.neg().div(&x.sqr().add_scalar(1.0)).mul(&w).sum_all() })),
        ];
        for (name, f) in cases {
            let e = grad_check(f, &[x.clone()], 1e-6);
            assert!(e < 1e-7, "{name}: fd mismatch {e}");
        }
    }

    #[test]
    fn abs_grad_away_from_kink() {
        let x = Tensor::leaf(randish(&[20], 3, 1.0, 0.0).mapv(|v| v + 0.3 * v.signum() + if v == 0.0 { 0.3 } else { 0.0 }));
        let e = grad_check(|| x.abs().mean_all(), &[x.clone()], 1e-6);
        assert!(e < 1e-8, "{e}");
    }

    #[test]
    fn structural_op_grads_match_fd() {
        let a = Tensor::leaf(randish(&[4, 6], 1, 1.0, 0.0));
        let b = Tensor::leaf(randish(&[4, 6], 2, 1.0, 0.0));
        let probe = Tensor::constant(randish(&[6, 2], 5, 1.0, 0.0));
        let params = [a.clone(), b.clone()];
        let e = grad_check(
            || {
                let cat = concat_rows(&[&a, &b]); // 8x6
                let left = cat.slice_cols(0, 3);
                let right = cat.slice_cols(3, 6);
                let picked = concat_cols(&[&left, &right]).gather_rows(&[0, 3, 3, 7, 2]);
                picked.reshape(&[5, 6]).matmul(&probe).sum_rows().sqr().sum_all()
            },
            &params,
            1e-5,
        );
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn div_col_and_add_row_grads() {
        let m = Tensor::leaf(randish(&[5, 3], 11, 1.0, 0.0));
        let r = Tensor::leaf(randish(&[3], 12, 1.0, 0.0));
        let c = Tensor::leaf(randish(&[5], 13, 0.3, 2.0)); // bounded away from 0
        let params = [m.clone(), r.clone(), c.clone()];
        let e = grad_check(|| m.add_row(&r).div_col(&c).sqr().mean_all(), &params, 1e-5);
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn sum_rows_matches_manual() {
        let x = Tensor::constant(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let s = x.sum_rows();
        assert_eq!(s.data().as_slice().unwrap(), &[3.0, 7.0]);
        let r = Tensor::constant(arr1(&[10.0, 20.0]).into_dyn());
        let y = x.add_row(&r);
        assert_eq!(y.data().as_slice().unwrap(), &[11.0, 22.0, 13.0, 24.0]);
    }
}
