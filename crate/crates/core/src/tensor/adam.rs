use super::param::ParamStore;
use super::Real;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every trainable parameter and clears the
    /// gradients. Fails without touching anything if a trainable parameter
    /// has no gradient.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable() && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        for p in store.iter_mut().filter(|p| p.trainable()) {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let grad = p.grad.take().expect("checked above");
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i].to_f64().unwrap();
                let m = b1 * p.moment1[i].to_f64().unwrap() + (1.0 - b1) * g;
                let v = b2 * p.moment2[i].to_f64().unwrap() + (1.0 - b2) * g * g;
                p.moment1[i] = T::from_f64_lossy(m);
                p.moment2[i] = T::from_f64_lossy(v);
                let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                data[i] = T::from_f64_lossy(data[i].to_f64().unwrap() - update);
            }
        }
        Ok(())
    }
}
