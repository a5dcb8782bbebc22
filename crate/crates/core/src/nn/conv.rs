//! Standard, depthwise and pointwise 2-D convolution (cross-correlation).

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Output extent of a convolution along one axis, or `None` if non-positive.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(op: &'static str, x: Shape, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let oh = conv_out_extent(x.h, k, stride, pad);
        let ow = conv_out_extent(x.w, k, stride, pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Self { h: x.h, w: x.w, oh, ow, k, stride, pad }),
            _ => Err(Error::InvalidShape(format!(
                "{op}: non-positive output extent for input {x}, kernel {k}, stride {stride}, padding {pad}"
            ))),
        }
    }

    /// Visits every output row that tap (ky, kx) touches inside the input,
    /// passing `(out_offset, in_offset, len)`: output elements
    /// `out_offset..out_offset+len` read input `in_offset + j*stride`.
    #[inline]
    fn for_each_row(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let s = self.stride as isize;
        let (p, kx, ky) = (self.pad as isize, kx as isize, ky as isize);
        // first ox with ox*s + kx - p >= 0, last with ox*s + kx - p <= w - 1
        let lo = ((p - kx).max(0) + s - 1) / s;
        let hi_num = self.w as isize - 1 + p - kx;
        if hi_num < 0 {
            return;
        }
        let hi = (hi_num / s).min(self.ow as isize - 1);
        if hi < lo {
            return;
        }
        let len = (hi - lo + 1) as usize;
        for oy in 0..self.oh as isize {
            let iy = oy * s + ky - p;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            let ix0 = lo * s + kx - p;
            f((oy as usize) * self.ow + lo as usize, (iy as usize) * self.w + ix0 as usize, len);
        }
    }
}

#[inline]
fn axpy<T: Real>(out: &mut [T], a: T, input: &[T], in_off: usize, stride: usize) {
    if stride == 1 {
        let len = out.len();
        for (o, &v) in out.iter_mut().zip(&input[in_off..in_off + len]) {
            *o += a * v;
        }
    } else {
        for (j, o) in out.iter_mut().enumerate() {
            *o += a * input[in_off + j * stride];
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], input: &[T], in_off: usize, stride: usize) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        for (&x, &y) in a.iter().zip(&input[in_off..in_off + a.len()]) {
            acc += x * y;
        }
    } else {
        for (j, &x) in a.iter().enumerate() {
            acc += x * input[in_off + j * stride];
        }
    }
    acc
}

/// Scatter of `g` back onto the input positions it was read from.
#[inline]
fn scatter<T: Real>(dst: &mut [T], in_off: usize, stride: usize, a: T, g: &[T]) {
    if stride == 1 {
        for (d, &v) in dst[in_off..in_off + g.len()].iter_mut().zip(g) {
            *d += a * v;
        }
    } else {
        for (j, &v) in g.iter().enumerate() {
            dst[in_off + j * stride] += a * v;
        }
    }
}

fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, geo: &Geometry) -> Tensor<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let (c_out, c_in, k) = (ws.n, ws.c, geo.k);
    let out_shape = Shape { n: xs.n, c: c_out, h: geo.oh, w: geo.ow };
    let mut out = vec![T::zero(); out_shape.numel()];
    let (in_plane, out_plane) = (xs.plane(), out_shape.plane());
    for n in 0..xs.n {
        for co in 0..c_out {
            let o = &mut out[(n * c_out + co) * out_plane..][..out_plane];
            if let Some(b) = b {
                o.fill(b.data()[co]);
            }
            for ci in 0..c_in {
                let xin = &x.data()[(n * c_in + ci) * in_plane..][..in_plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data()[((co * c_in + ci) * k + ky) * k + kx];
                        geo.for_each_row(ky, kx, |oo, io, len| {
                            axpy(&mut o[oo..oo + len], wv, xin, io, geo.stride);
                        });
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("conv2d output shape")
}

struct Conv2dRule {
    geo: Geometry,
    has_bias: bool,
}

impl<T: Real> Backward<T> for Conv2dRule {
    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (xs, ws, os) = (x.shape(), w.shape(), out.shape());
        let (c_out, c_in, k, geo) = (ws.n, ws.c, self.geo.k, &self.geo);
        let (in_plane, out_plane) = (xs.plane(), os.plane());
        let mut gx = vec![T::zero(); xs.numel()];
        let mut gw = vec![T::zero(); ws.numel()];
        for n in 0..xs.n {
            for co in 0..c_out {
                let g = &grad.data()[(n * c_out + co) * out_plane..][..out_plane];
                for ci in 0..c_in {
                    let xin = &x.data()[(n * c_in + ci) * in_plane..][..in_plane];
                    let gxin = &mut gx[(n * c_in + ci) * in_plane..][..in_plane];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = ((co * c_in + ci) * k + ky) * k + kx;
                            let wv = w.data()[wi];
                            let mut acc = T::zero();
                            geo.for_each_row(ky, kx, |oo, io, len| {
                                acc += dot(&g[oo..oo + len], xin, io, geo.stride);
                                scatter(gxin, io, geo.stride, wv, &g[oo..oo + len]);
                            });
                            gw[wi] += acc;
                        }
                    }
                }
            }
        }
        let mut grads = vec![Tensor::from_vec(xs, gx).ok(), Tensor::from_vec(ws, gw).ok()];
        if self.has_bias {
            let mut gb = vec![T::zero(); c_out];
            for n in 0..xs.n {
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += grad.data()[(n * c_out + co) * out_plane..][..out_plane].iter().copied().sum::<T>();
                }
            }
            grads.push(Tensor::from_vec(Shape { n: 1, c: c_out, h: 1, w: 1 }, gb).ok());
        }
        grads
    }
}

fn depthwise_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geo: &Geometry) -> Tensor<T> {
    let xs = x.shape();
    let k = geo.k;
    let out_shape = Shape { n: xs.n, c: xs.c, h: geo.oh, w: geo.ow };
    let mut out = vec![T::zero(); out_shape.numel()];
    let (in_plane, out_plane) = (xs.plane(), out_shape.plane());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let xin = &x.data()[(n * xs.c + c) * in_plane..][..in_plane];
            let o = &mut out[(n * xs.c + c) * out_plane..][..out_plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w.data()[(c * k + ky) * k + kx];
                    geo.for_each_row(ky, kx, |oo, io, len| {
                        axpy(&mut o[oo..oo + len], wv, xin, io, geo.stride);
                    });
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("depthwise output shape")
}

struct DepthwiseRule {
    geo: Geometry,
}

impl<T: Real> Backward<T> for DepthwiseRule {
    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (xs, ws, os) = (x.shape(), w.shape(), out.shape());
        let (k, geo) = (self.geo.k, &self.geo);
        let (in_plane, out_plane) = (xs.plane(), os.plane());
        let mut gx = vec![T::zero(); xs.numel()];
        let mut gw = vec![T::zero(); ws.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let g = &grad.data()[(n * xs.c + c) * out_plane..][..out_plane];
                let xin = &x.data()[(n * xs.c + c) * in_plane..][..in_plane];
                let gxin = &mut gx[(n * xs.c + c) * in_plane..][..in_plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = (c * k + ky) * k + kx;
                        let wv = w.data()[wi];
                        let mut acc = T::zero();
                        geo.for_each_row(ky, kx, |oo, io, len| {
                            acc += dot(&g[oo..oo + len], xin, io, geo.stride);
                            scatter(gxin, io, geo.stride, wv, &g[oo..oo + len]);
                        });
                        gw[wi] += acc;
                    }
                }
            }
        }
        vec![Tensor::from_vec(xs, gx).ok(), Tensor::from_vec(ws, gw).ok()]
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x` [n, c_in, h, w] with `weight` [c_out, c_in, k, k]
    /// plus an optional `bias` [1, c_out, 1, 1].
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        if ws.h != ws.w {
            return Err(Error::InvalidShape(format!("conv2d: kernel must be square, got {ws}")));
        }
        if xs.c != ws.c {
            return Err(Error::ChannelMismatch { op: "conv2d", expected: ws.c, got: xs.c });
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(Error::ChannelMismatch { op: "conv2d bias", expected: ws.n, got: bs.numel() });
            }
        }
        let geo = Geometry::new("conv2d", xs, ws.h, stride, padding)?;
        let out = conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), &geo);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("conv2d", out, inputs, Box::new(Conv2dRule { geo, has_bias: bias.is_some() }))
    }

    /// One k x k filter per channel: `weight` is [c, 1, k, k].
    pub fn depthwise_conv2d(&mut self, x: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        if ws.c != 1 || ws.h != ws.w {
            return Err(Error::InvalidShape(format!("depthwise_conv2d: weight must be [c, 1, k, k], got {ws}")));
        }
        if xs.c != ws.n {
            return Err(Error::ChannelMismatch { op: "depthwise_conv2d", expected: ws.n, got: xs.c });
        }
        let geo = Geometry::new("depthwise_conv2d", xs, ws.h, stride, padding)?;
        let out = depthwise_forward(self.value(x), self.value(weight), &geo);
        self.record("depthwise_conv2d", out, vec![x, weight], Box::new(DepthwiseRule { geo }))
    }

    /// Per-pixel linear map across channels; `weight` is [c_out, c_in, 1, 1].
    pub fn pointwise_conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let ws = self.shape(weight);
        if ws.h != 1 || ws.w != 1 {
            return Err(Error::InvalidShape(format!("pointwise_conv2d: weight must be 1x1, got {ws}")));
        }
        self.conv2d(x, weight, bias, 1, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn out_extent() {
        assert_eq!(conv_out_extent(8, 3, 1, 1), Some(8));
        assert_eq!(conv_out_extent(8, 3, 2, 1), Some(4));
        assert_eq!(conv_out_extent(3, 3, 1, 0), Some(1));
        assert_eq!(conv_out_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = SplitMix64::new(1);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::uniform(shape(2, 1, 5, 4), -1.0, 1.0, &mut rng));
        let w = g.input(Tensor::ones(shape(1, 1, 1, 1)));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn all_ones_three_by_three() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones(shape(1, 1, 3, 3)));
        let w = g.input(Tensor::ones(shape(1, 1, 3, 3)));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), shape(1, 1, 1, 1));
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn channel_mismatch_and_bad_extent() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones(shape(1, 2, 3, 3)));
        let w = g.input(Tensor::ones(shape(1, 3, 3, 3)));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::ChannelMismatch { .. })));
        let x = g.input(Tensor::ones(shape(1, 3, 2, 2)));
        assert!(matches!(g.conv2d(x, w, None, 1, 0), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn depthwise_delta_and_isolation() {
        let mut rng = SplitMix64::new(2);
        let mut g = Graph::<f64>::new();
        let xs = shape(1, 2, 4, 4);
        let mut xt = Tensor::uniform(xs, -1.0, 1.0, &mut rng);
        let x = g.input(xt.clone());
        let mut delta = Tensor::zeros(shape(2, 1, 3, 3));
        delta.data_mut()[4] = 1.0;
        delta.data_mut()[13] = 1.0;
        let wd = g.input(delta);
        let y = g.depthwise_conv2d(x, wd, 1, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));

        // channel 0 zero => output channel 0 zero for any filters
        xt.data_mut()[..16].fill(0.0);
        let x = g.input(xt);
        let w = g.input(Tensor::uniform(shape(2, 1, 3, 3), -1.0, 1.0, &mut rng));
        let y = g.depthwise_conv2d(x, w, 1, 1).unwrap();
        assert!(g.value(y).data()[..16].iter().all(|&v| v == 0.0));
        assert!(g.value(y).data()[16..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pointwise_identity_and_mean() {
        let mut rng = SplitMix64::new(3);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::uniform(shape(1, 2, 3, 3), -1.0, 1.0, &mut rng));
        let eye = g.input(Tensor::from_f64([2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero_b = g.input(Tensor::zeros(shape(1, 2, 1, 1)));
        let y = g.pointwise_conv2d(x, eye, Some(zero_b)).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let half = g.input(Tensor::from_f64([1, 2, 1, 1], &[0.5, 0.5]).unwrap());
        let y = g.pointwise_conv2d(x, half, None).unwrap();
        let xv = g.value(x);
        for i in 0..9 {
            let mean = 0.5 * xv.data()[i] + 0.5 * xv.data()[9 + i];
            assert!((g.value(y).data()[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn strided_bias_gradient() {
        let mut rng = SplitMix64::new(4);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::uniform(shape(2, 2, 5, 5), -1.0, 1.0, &mut rng));
        let w = g.input(Tensor::uniform(shape(3, 2, 3, 3), -1.0, 1.0, &mut rng));
        let b = g.input(Tensor::uniform(shape(1, 3, 1, 1), -1.0, 1.0, &mut rng));
        let y = g.conv2d(x, w, Some(b), 2, 1).unwrap();
        assert_eq!(g.shape(y), shape(2, 3, 3, 3));
        let l = g.reduce_sum(y).unwrap();
        g.backward(l).unwrap();
        // d(sum)/d(bias) = number of output pixels per channel over the batch
        assert!(g.grad(b).unwrap().data().iter().all(|&v| v == 18.0));
    }
}
