//! AdaBelief optimizer.

use crate::autodiff::Tensor;
use crate::config::AdaBeliefConfig;
use crate::error::{Error, Result};

/// Per-parameter moments and the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaBeliefState {
    pub config: AdaBeliefConfig,
    pub m: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdaBeliefState {
    pub fn new(config: AdaBeliefConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            config,
            m: zeros.clone(),
            s: zeros,
            t: 0,
        }
    }

    /// One update of every parameter. Gradients are checked for shape and
    /// finiteness before anything is modified; on error nothing changes.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Vec<f64>],
        lr: f64,
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("?", String::as_str);
            if g.len() != p.numel() || self.m[i].len() != p.numel() {
                return Err(Error::Usage(format!(
                    "gradient for {name} has {} elements, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {name}[{j}] = {} at step {}",
                    g[j],
                    self.t + 1
                )));
            }
        }

        self.t += 1;
        let AdaBeliefConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, s) = (&mut self.m[i], &mut self.s[i]);
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                let diff = g - m[j];
                s[j] = beta2 * s[j] + (1.0 - beta2) * diff * diff + eps;
                let m_hat = m[j] / bc1;
                let s_hat = s[j] / bc2;
                *theta -= lr * m_hat / (s_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
