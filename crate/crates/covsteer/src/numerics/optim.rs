//! Named parameters and the adaptive-moment optimizer.

use super::{NumericsError, Tensor};

/// A trainable tensor with persistent first/second moment estimates.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        let (r, c) = (value.rows(), value.cols());
        Parameter { name: name.into(), value, m: Tensor::zeros(r, c), v: Tensor::zeros(r, c) }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { lr, beta1, beta2, eps, t: 0 }
    }

    /// One update step. `grads` pairs with `params` by index; a NaN gradient
    /// aborts the run with a training error.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Tensor]) -> Result<(), NumericsError> {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, g) in params.iter_mut().zip(grads) {
            if g.has_nan() {
                return Err(NumericsError::NanGradient(p.name.clone()));
            }
            let gd = g.data();
            let md = p.m.data_mut();
            for (m, gv) in md.iter_mut().zip(gd) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
            }
            let vd = p.v.data_mut();
            for (v, gv) in vd.iter_mut().zip(gd) {
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
            }
            let pd = p.value.data_mut();
            for i in 0..pd.len() {
                let mhat = p.m.data()[i] / bc1;
                let vhat = p.v.data()[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
