//! Reverse-mode automatic differentiation on `f64` tensors.
//!
//! Every differentiable quantity in the crate is a [`Tensor`]: an immutable
//! n-d array node in a dynamically built computation graph. Graphs are built
//! per training step and dropped afterwards; parameters are persistent leaf
//! tensors whose data the optimizer mutates in place between steps.
//!
//! The engine is deliberately small: dense `ndarray` storage, a flat list of
//! parents per node, and one boxed backward closure per op. Node ids increase
//! monotonically with creation order, so a reverse sweep in descending id
//! order is a valid topological order. All math is `f64` so analytic
//! gradients can be checked against central finite differences tightly.

mod conv;
mod ops;
pub mod sparse;

pub use conv::{concat_channels, conv2d, global_mean_pool, upsample_nearest2};
pub use ops::{concat_cols, concat_rows, sigmoid_f, softplus_f, sparse_apply};
pub use sparse::SparseMap;

use ndarray::{ArrayD, IxDyn};
use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward closure: given the output node and the gradient flowing into it,
/// return one optional gradient per parent (None for constant parents).
pub(crate) type BackFn = Box<dyn Fn(&Node, &ArrayD<f64>) -> Vec<Option<ArrayD<f64>>>>;

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) data: RefCell<ArrayD<f64>>,
    pub(crate) grad: RefCell<Option<ArrayD<f64>>>,
    pub(crate) requires_grad: bool,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) op: Option<BackFn>,
}

/// A node in the differentiation graph. Cheap to clone (shared `Rc`).
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.node.id,
            self.shape(),
            self.node.requires_grad
        )
    }
}

impl Tensor {
    fn new(data: ArrayD<f64>, requires_grad: bool, parents: Vec<Tensor>, op: Option<BackFn>) -> Tensor {
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                op,
            }),
        }
    }

    /// A trainable leaf: participates in `backward` and accumulates gradient.
    pub fn leaf(data: ArrayD<f64>) -> Tensor {
        Tensor::new(data, true, Vec::new(), None)
    }

    /// A constant: never receives gradient.
    pub fn constant(data: ArrayD<f64>) -> Tensor {
        Tensor::new(data, false, Vec::new(), None)
    }

    /// 0-d constant scalar.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Result of an op. Drops the backward closure when no parent needs
    /// gradient, which prunes constant subgraphs automatically.
    pub(crate) fn from_op(data: ArrayD<f64>, parents: Vec<Tensor>, op: BackFn) -> Tensor {
        let requires = parents.iter().any(|p| p.node.requires_grad);
        if requires {
            Tensor::new(data, true, parents, Some(op))
        } else {
            Tensor::new(data, false, Vec::new(), None)
        }
    }

    pub fn data(&self) -> Ref<'_, ArrayD<f64>> {
        self.node.data.borrow()
    }

    /// Clone of the current gradient, if any flowed into this node.
    pub fn grad(&self) -> Option<ArrayD<f64>> {
        self.node.grad.borrow().clone()
    }

    /// Gradient or zeros in the tensor's shape.
    pub fn grad_or_zeros(&self) -> ArrayD<f64> {
        self.grad()
            .unwrap_or_else(|| ArrayD::zeros(self.data().raw_dim()))
    }

    /// Replace leaf data in place (optimizer update). Shape must match.
    pub fn set_data(&self, new: ArrayD<f64>) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.shape(), new.shape(), "set_data shape mismatch");
        *d = new;
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "value() needs a single-element tensor");
        *d.iter().next().unwrap()
    }

    /// Constant copy detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.data().clone())
    }

    /// Owned copy of the data as a 1-d array.
    pub fn to_array1(&self) -> ndarray::Array1<f64> {
        self.data().clone().into_dimensionality().expect("expected 1-d tensor")
    }

    /// Owned copy of the data as a 2-d array.
    pub fn to_array2(&self) -> ndarray::Array2<f64> {
        self.data().clone().into_dimensionality().expect("expected 2-d tensor")
    }

    /// Owned copy of the data as a 3-d array.
    pub fn to_array3(&self) -> ndarray::Array3<f64> {
        self.data().clone().into_dimensionality().expect("expected 3-d tensor")
    }

    /// Reverse sweep from a single-element tensor, accumulating gradients
    /// into every reachable node that requires them.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a single-element output");
        if !self.node.requires_grad {
            return;
        }

        // Collect the reachable differentiable subgraph.
        let mut seen: HashSet<u64> = HashSet::new();
        let mut order: Vec<Tensor> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.node.requires_grad || !seen.insert(t.node.id) {
                continue;
            }
            for p in &t.node.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        // Descending id == reverse topological order.
        order.sort_by(|a, b| b.node.id.cmp(&a.node.id));

        *self.node.grad.borrow_mut() = Some(ArrayD::ones(self.data().raw_dim()));

        for t in &order {
            let Some(op) = &t.node.op else { continue };
            let g = match t.node.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            let parent_grads = op(&t.node, &g);
            debug_assert_eq!(parent_grads.len(), t.node.parents.len());
            for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if !p.node.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), p.data().shape());
                    let mut slot = p.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => *acc += &pg,
                        None => *slot = Some(pg),
                    }
                }
            }
        }
    }
}

/// Normalized max-abs deviation between an analytic gradient and a central
/// finite difference of `build` at step `h`, maximized over the elements of
/// every tensor in `params`.
///
/// `build` must be a pure function of the parameter data (it is re-run twice
/// per element). The deviation for one parameter is
/// `max_i |g_an[i] - g_fd[i]| / max(||g_an||_inf, ||g_fd||_inf, floor)`.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> f64
where
    F: Fn() -> Tensor,
{
    for p in params {
        p.zero_grad();
    }
    let loss = build();
    loss.backward();
    let analytic: Vec<ArrayD<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();

    let mut worst = 0.0_f64;
    for (p, ga) in params.iter().zip(&analytic) {
        let n = p.numel();
        let mut gfd = ArrayD::zeros(p.data().raw_dim());
        for i in 0..n {
            let orig = p.data().as_slice().unwrap()[i];
            let bump = |v: f64| {
                {
                    let mut d = p.node.data.borrow_mut();
                    d.as_slice_mut().unwrap()[i] = v;
                }
                let out = build();
                let r = out.value();
                {
                    let mut d = p.node.data.borrow_mut();
                    d.as_slice_mut().unwrap()[i] = orig;
                }
                r
            };
            let fp = bump(orig + h);
            let fm = bump(orig - h);
            gfd.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * h);
        }
        let scale = ga
            .iter()
            .chain(gfd.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        let dev = ga
            .iter()
            .zip(gfd.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(dev / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn nd2(a: ndarray::Array2<f64>) -> ArrayD<f64> {
        a.into_dyn()
    }

    #[test]
    fn backward_through_shared_subexpression() {
        // y = sum((x*x) + x)  =>  dy/dx = 2x + 1
        let x = Tensor::leaf(nd2(arr2(&[[1.0, -2.0], [0.5, 3.0]])));
        let y = x.mul(&x).add(&x).sum_all();
        y.backward();
        let g = x.grad().unwrap();
        let expect = [3.0, -3.0, 2.0, 7.0];
        for (a, b) in g.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let x = Tensor::leaf(nd2(arr2(&[[2.0]])));
        let c = Tensor::constant(nd2(arr2(&[[5.0]])));
        let y = x.mul(&c).sum_all();
        y.backward();
        assert!(c.grad().is_none());
        assert!((x.grad().unwrap()[[0, 0]] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn grad_check_umbrella_composite() {
        // Exercise a chain of many ops at once; per-op checks live in ops.rs.
        let mut rng_state = 0x9E37u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = Tensor::leaf(ArrayD::from_shape_fn(IxDyn(&[4, 3]), |_| next() * 0.8));
        let b = Tensor::leaf(ArrayD::from_shape_fn(IxDyn(&[3, 5]), |_| next() * 0.8));
        let c = Tensor::leaf(ArrayD::from_shape_fn(IxDyn(&[5]), |_| next()));
        let params = [a.clone(), b.clone(), c.clone()];
        let err = grad_check(
            || {
                let h = a.matmul(&b).add_row(&c).tanh();
                let s = h.sigmoid().mul(&h.softplus(2.0));
                s.sum_rows().sqr().mean_all()
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-6, "composite grad check failed: {err}");
    }
}
