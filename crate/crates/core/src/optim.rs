//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

/// Per-parameter first/second moment estimates and the shared step counter.
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    pub hyper: AdamHyper,
}

impl<T: Element> AdamState<T> {
    /// Moments start at zero, step counter at zero.
    pub fn new(param_dims: &[&[usize]], hyper: AdamHyper) -> Self {
        AdamState {
            m: param_dims.iter().map(|d| Tensor::zeros(d)).collect(),
            v: param_dims.iter().map(|d| Tensor::zeros(d)).collect(),
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update over all parameters. `params` and `grads`
    /// must align with the dims this state was built from; update arithmetic
    /// runs in f64 regardless of the storage dtype.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(
                "adam_step",
                format!("expected {} parameters, got {} params / {} grads", self.m.len(), params.len(), grads.len()),
            ));
        }
        for i in 0..params.len() {
            if params[i].dims() != self.m[i].dims() || grads[i].dims() != self.m[i].dims() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "parameter {i}: state dims {:?}, param {:?}, grad {:?}",
                        self.m[i].dims(),
                        params[i].dims(),
                        grads[i].dims()
                    ),
                ));
            }
        }
        self.t += 1;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let p = params[i].as_mut_slice();
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                let mj = b1 * m[j].to_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].to_f64() + (1.0 - b2) * gj * gj;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let m_hat = mj / bias1;
                let v_hat = vj / bias2;
                let updated = p[j].to_f64() - self.hyper.lr * m_hat / (v_hat.sqrt() + self.hyper.eps);
                p[j] = T::from_f64(updated);
            }
        }
        Ok(())
    }
}
