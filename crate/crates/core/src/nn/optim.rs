use super::tensor::{Grads, ParamStore};
use super::NnError;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamW {
    /// Applies one update. Parameters without a gradient entry are left untouched, moments
    /// included. Consumes the gradients.
    pub fn step(&self, store: &mut ParamStore, grads: Grads) -> Result<(), NnError> {
        if grads.is_empty() {
            return Err(NnError::NoGradients);
        }
        store.step += 1;
        store.version += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.g.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if g.shape() != store.values[i].shape() {
                return Err(NnError::Shape(format!("gradient for {} has the wrong shape", store.name(super::ParamId(i)))));
            }
            let (p, m, v) = (&mut store.values[i], &mut store.m[i], &mut store.v[i]);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.data[j] / c1;
                let vh = v.data[j] / c2;
                p.data[j] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p.data[j]);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `base` to 0 over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let u = (step as f64 / total as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * u).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tensor, ParamId};

    fn one(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    fn grad(id: ParamId, g: f64) -> Grads {
        let mut gr = Grads::empty(1);
        gr.accumulate(id, &Tensor::scalar(g));
        gr
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let (mut s, id) = one(1.0);
        let opt = AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
        opt.step(&mut s, grad(id, 0.5)).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·(g/(|g|+eps) + wd·p)
        let expect = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
        assert!((s.get(id).item() - expect).abs() < 1e-15);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_lr_keeps_values() {
        let (mut s, id) = one(2.0);
        let opt = AdamW { lr: 0.0, weight_decay: 0.1, ..AdamW::default() };
        opt.step(&mut s, grad(id, 3.0)).unwrap();
        assert_eq!(s.get(id).item(), 2.0);
    }

    #[test]
    fn deterministic_and_requires_grads() {
        let (mut a, id) = one(0.3);
        let (mut b, _) = one(0.3);
        let opt = AdamW::default();
        for _ in 0..3 {
            opt.step(&mut a, grad(id, 0.7)).unwrap();
            opt.step(&mut b, grad(id, 0.7)).unwrap();
        }
        assert_eq!(a, b);
        assert!(matches!(opt.step(&mut a, Grads::empty(1)), Err(NnError::NoGradients)));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 10, 10).abs() < 1e-15);
        assert!((cosine_lr(1.0, 5, 10) - 0.5).abs() < 1e-12);
    }
}
