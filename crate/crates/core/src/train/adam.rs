use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

/// Adam with L2 weight decay added to the gradient (PyTorch `Adam`).
pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    steps: Vec<i32>,
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, weight_decay: f64) -> Self {
        let n = vars.len();
        Adam { vars, m: vec![None; n], v: vec![None; n], steps: vec![0; n], lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Updates every variable that received a gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (i, var) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let p = var.as_tensor().detach();
            let mut g = g.detach();
            if self.weight_decay != 0.0 {
                g = (g + (&p * self.weight_decay)?)?;
            }
            let m = match &self.m[i] {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match &self.v[i] {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            self.steps[i] += 1;
            let t = self.steps[i];
            let m_hat = (&m / (1.0 - self.beta1.powi(t)))?;
            let v_hat = (&v / (1.0 - self.beta2.powi(t)))?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(p - (update * self.lr)?)?)?;
            self.m[i] = Some(m);
            self.v[i] = Some(v);
        }
        Ok(())
    }
}
