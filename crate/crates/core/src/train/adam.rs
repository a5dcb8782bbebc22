use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    /// First moments, one per parameter in store order.
    pub m: Vec<Tensor<T>>,
    /// Second moments.
    pub v: Vec<Tensor<T>>,
    /// Completed steps.
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    /// Applies one update from the gradients in `store`. A non-finite
    /// gradient aborts before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors but the model has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|p| p.grad.first_non_finite().is_some()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.data_mut();
            for (((w, &g), m), v) in values.iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::full(Shape::scalar(), v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.7);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0);
        s.iter_mut().next().unwrap().grad.fill(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        // m_hat = 1, v_hat = 1
        let w = s.iter().next().unwrap().value.item();
        assert!((w + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(1.0);
        s.iter_mut().next().unwrap().grad.fill(f64::NAN);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(adam.t, 0);
        assert_eq!(s.iter().next().unwrap().value.item(), 1.0);
    }
}
