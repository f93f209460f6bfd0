use crate::error::{Error, Result};
use crate::numerics::{Matrix, Parameter};

/// Adam with bias correction and one learning rate per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &[Parameter]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `lr(idx)` returns `None` for parameters that are
    /// frozen; their values and moments are left untouched.
    pub fn update(&mut self, params: &mut [Parameter], lr: impl Fn(usize) -> Option<f64>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim(
                "adam",
                format!("{} parameters, optimizer built for {}", params.len(), self.m.len()),
            ));
        }
        for p in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in params.iter_mut().enumerate() {
            let Some(rate) = lr(idx) else { continue };
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
