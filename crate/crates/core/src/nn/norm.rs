//! Group normalization.

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

struct GroupNormRule<T> {
    groups: usize,
    mean: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> Backward<T> for GroupNormRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let s = x.shape();
        let cg = s.c / self.groups;
        let plane = s.plane();
        let m = T::from_usize(cg * plane);
        let mut gx = vec![T::zero(); s.numel()];
        let mut ggamma = vec![T::zero(); s.c];
        let mut gbeta = vec![T::zero(); s.c];
        for n in 0..s.n {
            for grp in 0..self.groups {
                let stat = n * self.groups + grp;
                let (mean, rstd) = (self.mean[stat], self.rstd[stat]);
                let start = s.index(n, grp * cg, 0, 0);
                let len = cg * plane;
                let xs = &x.data()[start..start + len];
                let gs = &grad.data()[start..start + len];
                // sums of dxhat and dxhat * xhat over the group
                let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
                for ci in 0..cg {
                    let c = grp * cg + ci;
                    let gm = gamma.data()[c];
                    let (mut dg, mut db) = (T::zero(), T::zero());
                    for i in ci * plane..(ci + 1) * plane {
                        let xhat = (xs[i] - mean) * rstd;
                        let d = gs[i] * gm;
                        sum_d += d;
                        sum_dx += d * xhat;
                        dg += gs[i] * xhat;
                        db += gs[i];
                    }
                    ggamma[c] += dg;
                    gbeta[c] += db;
                }
                let (mean_d, mean_dx) = (sum_d / m, sum_dx / m);
                for ci in 0..cg {
                    let gm = gamma.data()[grp * cg + ci];
                    for i in ci * plane..(ci + 1) * plane {
                        let xhat = (xs[i] - mean) * rstd;
                        gx[start + i] = rstd * (gs[i] * gm - mean_d - xhat * mean_dx);
                    }
                }
            }
        }
        let cshape = Shape { n: 1, c: s.c, h: 1, w: 1 };
        vec![Tensor::from_vec(s, gx).ok(), Tensor::from_vec(cshape, ggamma).ok(), Tensor::from_vec(cshape, gbeta).ok()]
    }
}

impl<T: Real> Graph<T> {
    /// Normalizes each (sample, channel group) over its channels and spatial
    /// extent, then applies per-channel `gamma` and `beta` ([1, c, 1, 1]).
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x);
        if groups == 0 || !s.c.is_multiple_of(groups) {
            return Err(Error::Config(format!("group_norm: {} channels not divisible by {groups} groups", s.c)));
        }
        for (op, v) in [("group_norm gamma", gamma), ("group_norm beta", beta)] {
            let got = self.shape(v).numel();
            if got != s.c {
                return Err(Error::ChannelMismatch { op, expected: s.c, got });
            }
        }
        let (xt, gt, bt) = (self.value(x), self.value(gamma), self.value(beta));
        let cg = s.c / groups;
        let plane = s.plane();
        let m = T::from_usize(cg * plane);
        let eps = T::from_f64(eps);
        let mut out = vec![T::zero(); s.numel()];
        let mut means = Vec::with_capacity(s.n * groups);
        let mut rstds = Vec::with_capacity(s.n * groups);
        for n in 0..s.n {
            for grp in 0..groups {
                let start = s.index(n, grp * cg, 0, 0);
                let xs = &xt.data()[start..start + cg * plane];
                let mean = xs.iter().copied().sum::<T>() / m;
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
                let rstd = T::one() / (var + eps).sqrt();
                for ci in 0..cg {
                    let c = grp * cg + ci;
                    let (gm, bt) = (gt.data()[c], bt.data()[c]);
                    for i in ci * plane..(ci + 1) * plane {
                        out[start + i] = (xs[i] - mean) * rstd * gm + bt;
                    }
                }
                means.push(mean);
                rstds.push(rstd);
            }
        }
        let out = Tensor::from_vec(s, out)?;
        self.record(
            "group_norm",
            out,
            vec![x, gamma, beta],
            Box::new(GroupNormRule { groups, mean: means, rstd: rstds }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn setup(g: &mut Graph<f64>, c: usize) -> (Var, Var) {
        let cs = Shape::new(1, c, 1, 1).unwrap();
        (g.input(Tensor::ones(cs)), g.input(Tensor::zeros(cs)))
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(2, 4, 3, 3).unwrap(), 3.7));
        let (gm, bt) = setup(&mut g, 4);
        let y = g.group_norm(x, gm, bt, 2, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn normalized_statistics() {
        let mut rng = SplitMix64::new(7);
        let mut g = Graph::<f64>::new();
        let s = Shape::new(2, 8, 4, 4).unwrap();
        let x = g.input(Tensor::uniform(s, -5.0, 9.0, &mut rng));
        let (gm, bt) = setup(&mut g, 8);
        let y = g.group_norm(x, gm, bt, 4, 1e-5).unwrap();
        let yv = g.value(y);
        for chunk in yv.data().chunks(2 * 16) {
            let mean = chunk.iter().sum::<f64>() / 32.0;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-5, "{mean}");
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn divisibility_enforced() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones(Shape::new(1, 6, 2, 2).unwrap()));
        let (gm, bt) = setup(&mut g, 6);
        assert!(g.group_norm(x, gm, bt, 4, 1e-5).is_err());
    }
}
