//! Adam with bias correction. Moment buffers are keyed by parameter index
//! and sized lazily on first use, so one optimizer can drive any fixed
//! parameter list.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
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

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to `params` in place given matching `grads`.
    /// A parameter whose gradient is exactly zero everywhere stays bitwise
    /// unchanged (the update is 0/(0+eps) = 0).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        while self.m.len() < params.len() {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if params[i].shape() != grads[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    detail: format!("param {i}: {:?} vs {:?}", params[i].shape(), grads[i].shape()),
                });
            }
            let n = params[i].len();
            if self.m[i].is_empty() {
                self.m[i] = vec![0.0; n];
                self.v[i] = vec![0.0; n];
            } else if self.m[i].len() != n {
                return Err(Error::InvalidArgument(format!(
                    "adam: param {i} changed size from {} to {n}",
                    self.m[i].len()
                )));
            }
            let gd = grads[i].data().to_vec();
            let pd = params[i].data_mut();
            for j in 0..n {
                let g = gd[j];
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: "adam" });
                }
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][j] / bc1;
                let vh = self.v[i][j] / bc2;
                pd[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
