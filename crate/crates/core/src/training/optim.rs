use crate::codec::ParamSet;
use crate::error::{Error, Result};

/// Adam moment estimates for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect()
        };
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads[i]` belongs to `params.tensors[i]`;
    /// `None` means the tensor received no gradient this step.
    pub fn update(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<&[f32]>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameter tensors",
                grads.len(),
                params.tensors.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((_, p), g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let w = p.data_mut();
            if let Some(g) = g {
                if g.len() != w.len() {
                    return Err(Error::InvalidArgument(format!(
                        "gradient has {} values for a tensor of {}",
                        g.len(),
                        w.len()
                    )));
                }
            }
            for i in 0..w.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                w[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}
