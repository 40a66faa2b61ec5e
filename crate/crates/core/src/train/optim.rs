use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real};

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: usize, d: usize, warmup: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::Config("learning-rate schedule starts at step 1".into()));
    }
    if warmup == 0 || d == 0 {
        return Err(Error::Config("warmup and d must be positive".into()));
    }
    let s = step as f64;
    Ok((d as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub hyper: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, hyper: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect();
        Self { step: 0, hyper, m: zeros(), v: zeros() }
    }

    /// Moment buffers of one parameter.
    pub fn moments(&self, id: ParamId) -> (&[T], &[T]) {
        (&self.m[id.index()], &self.v[id.index()])
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// left alone. Every gradient is checked before anything changes.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Option<&[T]>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if let Some(g) = g {
                if g.len() != self.m[id.index()].len() {
                    return Err(Error::Config(format!("gradient shape mismatch for {}", params.name(*id))));
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGrad(params.name(*id).to_string()));
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step_size = T::lit(lr / c1);
        let inv_c2 = T::lit(1.0 / c2);
        let eps = T::lit(eps);
        for (id, g) in grads {
            let Some(g) = g else { continue };
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = params.get_mut(*id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + ob1 * g[i];
                v[i] = b2 * v[i] + ob2 * g[i] * g[i];
                p[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
