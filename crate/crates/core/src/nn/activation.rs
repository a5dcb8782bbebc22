use crate::autodiff::{Backward, Graph, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Logistic function without overflow for large |x|.
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct LeakyReluRule<T>(T);

impl<T: Real> Backward<T> for LeakyReluRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x >= T::zero() { g } else { g * self.0 })
            .collect();
        vec![Tensor::from_vec(grad.shape(), data).ok()]
    }
}

struct SigmoidRule;

impl<T: Real> Backward<T> for SigmoidRule {
    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = out.data().iter().zip(grad.data()).map(|(&s, &g)| g * s * (T::one() - s)).collect();
        vec![Tensor::from_vec(grad.shape(), data).ok()]
    }
}

impl<T: Real> Graph<T> {
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let slope = T::from_f64(slope);
        if self.tracks_branches() {
            let signs: Vec<u64> = self.value(x).data().iter().map(|&v| u64::from(v >= T::zero())).collect();
            self.note_branches(signs);
        }
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { v * slope });
        self.record("leaky_relu", out, vec![x], Box::new(LeakyReluRule(slope)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(stable_sigmoid);
        self.record("sigmoid", out, vec![x], Box::new(SigmoidRule))
    }
}
