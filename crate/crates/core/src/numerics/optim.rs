//! AdamW with decoupled weight decay and bias-corrected moments.

use super::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied {
        step: u64,
    },
    /// Some gradient held NaN or ±inf; nothing was updated.
    SkippedNonFinite {
        param: String,
    },
}

/// Single-tensor AdamW update. `step` is 1-based and already incremented.
pub fn adamw_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    cfg: &AdamWConfig,
    step: u64,
) {
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    let decay = T::lit(1.0 - lr * cfg.weight_decay);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let (lr_t, eps) = (T::lit(lr), T::lit(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1t * m[i] + one_b1 * g;
        v[i] = b2t * v[i] + one_b2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
}

pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: store.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect(),
            v: store.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr`. Parameters with no gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> StepOutcome {
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return StepOutcome::SkippedNonFinite {
                        param: store.name(id).to_string(),
                    };
                }
            }
        }
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            adamw_update(
                store.get_mut(id).data_mut(),
                g.data(),
                &mut self.m[i],
                &mut self.v[i],
                lr,
                &self.cfg,
                self.step,
            );
        }
        StepOutcome::Applied { step: self.step }
    }
}
