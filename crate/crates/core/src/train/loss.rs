use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::stable_sigmoid;
use crate::tensor::{Real, Shape, Tensor};

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    Bce,
    /// Unweighted sum of the two.
    DiceBce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::Bce => "bce",
            LossKind::DiceBce => "dice+bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "bce" => Ok(LossKind::Bce),
            "dice+bce" => Ok(LossKind::DiceBce),
            other => Err(Error::Parse(format!("unknown loss `{other}` (expected dice|bce|dice+bce)"))),
        }
    }
}

fn check_target<T: Real>(op: &'static str, logits: Shape, target: &Tensor<T>) -> Result<()> {
    if logits != target.shape() {
        return Err(Error::ShapeMismatch { op, left: logits, right: target.shape() });
    }
    Ok(())
}

struct SoftDiceRule<T> {
    target: Tensor<T>,
    probs: Vec<T>,
    /// Per-sample numerator and denominator of the Dice ratio.
    ratios: Vec<(T, T)>,
}

impl<T: Real> Backward<T> for SoftDiceRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = grad.item() / T::from_f64(self.ratios.len() as f64);
        let two = T::from_f64(2.0);
        let per_sample = self.probs.len() / self.ratios.len();
        let data = self
            .probs
            .iter()
            .zip(self.target.data())
            .enumerate()
            .map(|(i, (&p, &y))| {
                let (num, den) = self.ratios[i / per_sample];
                // d/dp of -(num/den), times dp/dx
                let dl_dp = -(two * y * den - num) / (den * den);
                g * dl_dp * p * (T::one() - p)
            })
            .collect();
        vec![Tensor::from_vec(self.target.shape(), data).ok()]
    }
}

struct BceRule<T> {
    target: Tensor<T>,
}

impl<T: Real> Backward<T> for BceRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let scale = grad.item() / T::from_f64(self.target.len() as f64);
        let data =
            inputs[0].data().iter().zip(self.target.data()).map(|(&x, &y)| scale * (stable_sigmoid(x) - y)).collect();
        vec![Tensor::from_vec(self.target.shape(), data).ok()]
    }
}

impl<T: Real> Graph<T> {
    /// `1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s)` with `p = sigmoid(logits)`,
    /// computed per sample and averaged over the batch.
    pub fn soft_dice_loss(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let shape = self.shape(logits);
        check_target("soft_dice_loss", shape, target)?;
        let probs: Vec<T> = self.value(logits).data().iter().map(|&x| stable_sigmoid(x)).collect();
        let smooth = T::from_f64(DICE_SMOOTH);
        let per_sample = shape.numel() / shape.n;
        let mut ratios = Vec::with_capacity(shape.n);
        let mut total = T::zero();
        for (p, y) in probs.chunks(per_sample).zip(target.data().chunks(per_sample)) {
            let (mut py, mut sp, mut sy) = (T::zero(), T::zero(), T::zero());
            for (&p, &y) in p.iter().zip(y) {
                py += p * y;
                sp += p;
                sy += y;
            }
            let num = T::from_f64(2.0) * py + smooth;
            let den = sp + sy + smooth;
            total += T::one() - num / den;
            ratios.push((num, den));
        }
        let out = Tensor::scalar(total / T::from_f64(shape.n as f64));
        let rule = SoftDiceRule { target: target.clone(), probs, ratios };
        self.record("soft_dice_loss", out, vec![logits], Box::new(rule))
    }

    /// Mean of `max(x, 0) - x y + ln(1 + exp(-|x|))`.
    pub fn bce_loss(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        check_target("bce_loss", self.shape(logits), target)?;
        let mut total = T::zero();
        for (&x, &y) in self.value(logits).data().iter().zip(target.data()) {
            total += x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(total / T::from_f64(target.len() as f64));
        let rule = BceRule { target: target.clone() };
        self.record("bce_loss", out, vec![logits], Box::new(rule))
    }

    pub fn segmentation_loss(&mut self, kind: LossKind, logits: Var, target: &Tensor<T>) -> Result<Var> {
        match kind {
            LossKind::Dice => self.soft_dice_loss(logits, target),
            LossKind::Bce => self.bce_loss(logits, target),
            LossKind::DiceBce => {
                let d = self.soft_dice_loss(logits, target)?;
                let b = self.bce_loss(logits, target)?;
                self.add(d, b)
            }
        }
    }
}
