//! 2x resampling: nearest-neighbour upsampling, max pooling and
//! softmax-weighted attention pooling over non-overlapping 2x2 windows.

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

fn require_even(op: &'static str, s: Shape) -> Result<()> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidShape(format!("{op}: spatial extents must be even, got {}x{}", s.h, s.w)));
    }
    Ok(())
}

/// Flat input offsets (relative to the plane) of output pixel (oy, ox)'s window,
/// in row-major order.
#[inline]
fn window(w: usize, oy: usize, ox: usize) -> [usize; 4] {
    let base = 2 * oy * w + 2 * ox;
    [base, base + 1, base + w, base + w + 1]
}

struct UpsampleRule;

impl<T: Real> Backward<T> for UpsampleRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = inputs[0].shape();
        let ow = 2 * s.w;
        let mut gx = vec![T::zero(); s.numel()];
        for (p, gp) in gx.chunks_mut(s.plane()).enumerate() {
            let g = &grad.data()[p * 4 * s.plane()..][..4 * s.plane()];
            for y in 0..s.h {
                for x in 0..s.w {
                    gp[y * s.w + x] = window(ow, y, x).iter().map(|&i| g[i]).sum();
                }
            }
        }
        vec![Tensor::from_vec(s, gx).ok()]
    }
}

struct MaxPoolRule {
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPoolRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut gx = vec![T::zero(); inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            gx[src] += g;
        }
        vec![Tensor::from_vec(inputs[0].shape(), gx).ok()]
    }
}

struct AttentionPoolRule<T> {
    /// Softmax weight of every input pixel within its window, [n, 1, h, w].
    weights: Vec<T>,
}

impl<T: Real> Backward<T> for AttentionPoolRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, logits) = (inputs[0], inputs[1]);
        let s = x.shape();
        let (plane, oplane, ow) = (s.plane(), s.plane() / 4, s.w / 2);
        let mut gx = vec![T::zero(); s.numel()];
        // d out / d weight, accumulated over channels
        let mut gwt = vec![T::zero(); s.n * plane];
        for n in 0..s.n {
            let wts = &self.weights[n * plane..(n + 1) * plane];
            let gw = &mut gwt[n * plane..(n + 1) * plane];
            for c in 0..s.c {
                let xs = &x.data()[s.index(n, c, 0, 0)..][..plane];
                let gs = &grad.data()[(n * s.c + c) * oplane..][..oplane];
                let gxs = &mut gx[s.index(n, c, 0, 0)..][..plane];
                for oy in 0..s.h / 2 {
                    for ox in 0..ow {
                        let go = gs[oy * ow + ox];
                        for i in window(s.w, oy, ox) {
                            gxs[i] += wts[i] * go;
                            gw[i] += xs[i] * go;
                        }
                    }
                }
            }
        }
        // softmax Jacobian per window
        let mut gl = vec![T::zero(); logits.len()];
        for n in 0..s.n {
            let wts = &self.weights[n * plane..(n + 1) * plane];
            let gw = &gwt[n * plane..(n + 1) * plane];
            let gls = &mut gl[n * plane..(n + 1) * plane];
            for oy in 0..s.h / 2 {
                for ox in 0..ow {
                    let win = window(s.w, oy, ox);
                    let dotp: T = win.iter().map(|&i| wts[i] * gw[i]).sum();
                    for i in win {
                        gls[i] = wts[i] * (gw[i] - dotp);
                    }
                }
            }
        }
        vec![Tensor::from_vec(s, gx).ok(), Tensor::from_vec(logits.shape(), gl).ok()]
    }
}

impl<T: Real> Graph<T> {
    /// Replicates each pixel into a 2x2 block.
    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        let os = Shape { h: 2 * s.h, w: 2 * s.w, ..s };
        let mut out = vec![T::zero(); os.numel()];
        for (p, op) in out.chunks_mut(os.plane()).enumerate() {
            let src = &xt.data()[p * s.plane()..][..s.plane()];
            for y in 0..s.h {
                for x in 0..s.w {
                    for i in window(os.w, y, x) {
                        op[i] = src[y * s.w + x];
                    }
                }
            }
        }
        let out = Tensor::from_vec(os, out)?;
        self.record("upsample_nearest_2x", out, vec![x], Box::new(UpsampleRule))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first pixel in row-major
    /// window order.
    pub fn max_pool_2x(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        require_even("max_pool_2x", s)?;
        let os = Shape { h: s.h / 2, w: s.w / 2, ..s };
        let mut out = Vec::with_capacity(os.numel());
        let mut argmax = Vec::with_capacity(os.numel());
        for p in 0..s.n * s.c {
            let base = p * s.plane();
            let src = &xt.data()[base..base + s.plane()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let win = window(s.w, oy, ox);
                    let mut best = win[0];
                    for &i in &win[1..] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(base + best);
                }
            }
        }
        let out = Tensor::from_vec(os, out)?;
        self.note_branches(argmax.iter().map(|&i| i as u64));
        self.record("max_pool_2x", out, vec![x], Box::new(MaxPoolRule { argmax }))
    }

    /// Attention pooling: within every 2x2 window, the single-channel `logits`
    /// ([n, 1, h, w]) are softmax-normalized and the output is the weighted sum
    /// of `x` over the window, with the same weights for every channel.
    pub fn attention_pool_2x(&mut self, x: Var, logits: Var) -> Result<Var> {
        let (xt, lt) = (self.value(x), self.value(logits));
        let (s, ls) = (xt.shape(), lt.shape());
        require_even("attention_pool_2x", s)?;
        if ls != s.with_c(1) {
            return Err(Error::ShapeMismatch { op: "attention_pool_2x", left: s, right: ls });
        }
        let plane = s.plane();
        let os = Shape { h: s.h / 2, w: s.w / 2, ..s };
        let mut weights = vec![T::zero(); s.n * plane];
        for n in 0..s.n {
            let l = &lt.data()[n * plane..(n + 1) * plane];
            let wts = &mut weights[n * plane..(n + 1) * plane];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let win = window(s.w, oy, ox);
                    let mx = win.iter().map(|&i| l[i]).fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for i in win {
                        wts[i] = (l[i] - mx).exp();
                        z += wts[i];
                    }
                    for i in win {
                        wts[i] = wts[i] / z;
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..s.n {
            let wts = &weights[n * plane..(n + 1) * plane];
            for c in 0..s.c {
                let src = &xt.data()[s.index(n, c, 0, 0)..][..plane];
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        out.push(window(s.w, oy, ox).iter().map(|&i| wts[i] * src[i]).sum());
                    }
                }
            }
        }
        let out = Tensor::from_vec(os, out)?;
        self.record("attention_pool_2x", out, vec![x, logits], Box::new(AttentionPoolRule { weights }))
    }
}
