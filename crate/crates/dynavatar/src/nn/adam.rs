//! Adaptive-moment gradient descent with bias correction.

use crate::tape::Tensor;
use ndarray::ArrayD;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over a fixed-order parameter list. Gradients are consumed
    /// (zeroed) so the next step starts clean.
    pub fn step(&mut self, params: &[Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.data().raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.data().raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed under the optimizer");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter().enumerate() {
            let g = p.grad_or_zeros();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut data = p.data().clone();
            ndarray::Zip::from(&mut data).and(&*m).and(&*v).for_each(|d, &m, &v| {
                let mhat = m / b1t;
                let vhat = v / b2t;
                *d -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
            p.set_data(data);
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn adam_drives_a_quadratic_to_its_minimum() {
        let x = Tensor::leaf(ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let target = Tensor::constant(ndarray::arr1(&[1.0, -2.0]).into_dyn());
        let mut opt = Adam::new(0.05);
        for _ in 0..400 {
            let loss = x.sub(&target).sqr().sum_all();
            loss.backward();
            opt.step(&[x.clone()]);
        }
        let d = x.data();
        assert!((d[[0]] - 1.0).abs() < 1e-3 && (d[[1]] + 2.0).abs() < 1e-3, "{:?}", d);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let x = Tensor::leaf(ArrayD::from_elem(IxDyn(&[3]), 0.5));
            let mut opt = Adam::new(0.01);
            for i in 0..50 {
                let c = Tensor::scalar(1.0 + (i % 3) as f64);
                let loss = x.sum_all().mul(&c).sqr().mean_all();
                loss.backward();
                opt.step(&[x.clone()]);
            }
            let out = x.data().as_slice().unwrap().to_vec();
            out
        };
        assert_eq!(run(), run());
    }
}
