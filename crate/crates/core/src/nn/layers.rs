//! Parameter bundles for the convolutional layers.
//!
//! Each bundle owns [`ParamId`]s into a shared [`ParamStore`] and knows its
//! parameter count in closed form.

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_GN_EPS: f64 = 1e-5;

/// Number of learnable scalars.
pub trait ParamCount {
    fn param_count(&self) -> usize;
}

pub fn conv2d_param_count(k: usize, c_in: usize, c_out: usize, bias: bool) -> usize {
    k * k * c_in * c_out + if bias { c_out } else { 0 }
}

pub fn depthwise_param_count(k: usize, c: usize) -> usize {
    k * k * c
}

/// Depthwise (bias-free) followed by pointwise with bias.
pub fn separable_param_count(k: usize, c_in: usize, c_out: usize) -> usize {
    depthwise_param_count(k, c_in) + conv2d_param_count(1, c_in, c_out, true)
}

pub fn group_norm_param_count(c: usize) -> usize {
    2 * c
}

pub fn attention_pool_param_count(c_in: usize) -> usize {
    c_in + 1
}

/// Registers freshly initialized parameters.
///
/// Weights use fan-in scaled uniform initialization, `U(-b, b)` with
/// `b = sqrt(6 / fan_in)`.
pub struct Init<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut SplitMix64,
}

impl<'a, T: Real> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut SplitMix64) -> Self {
        Self { store, rng }
    }

    pub fn fan_in(&mut self, name: String, shape: Shape, fan_in: usize) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let value = Tensor::uniform(shape, -bound, bound, self.rng);
        self.store.add(name, value)
    }

    pub fn constant(&mut self, name: String, shape: Shape, v: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, T::from_f64(v)))
    }
}

fn channel_shape(c: usize) -> Shape {
    Shape { n: 1, c, h: 1, w: 1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1 with padding k/2, so spatial extents are preserved.
    pub fn same(c_in: usize, c_out: usize, k: usize) -> Self {
        Self { c_in, c_out, k, stride: 1, padding: k / 2, bias: true }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, spec: ConvSpec) -> Result<Self> {
        if spec.k.is_multiple_of(2) {
            return Err(Error::Config(format!("{name}: kernel size must be odd, got {}", spec.k)));
        }
        if spec.stride == 0 || spec.c_in == 0 || spec.c_out == 0 {
            return Err(Error::Config(format!("{name}: stride and channel counts must be positive")));
        }
        let shape = Shape { n: spec.c_out, c: spec.c_in, h: spec.k, w: spec.k };
        let weight = init.fan_in(format!("{name}.weight"), shape, spec.k * spec.k * spec.c_in)?;
        let bias =
            if spec.bias { Some(init.constant(format!("{name}.bias"), channel_shape(spec.c_out), 0.0)?) } else { None };
        Ok(Self { weight, bias, spec })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.spec.stride, self.spec.padding)
    }
}

impl ParamCount for Conv2d {
    fn param_count(&self) -> usize {
        conv2d_param_count(self.spec.k, self.spec.c_in, self.spec.c_out, self.spec.bias)
    }
}

/// One k x k filter per channel, no bias.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub channels: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DepthwiseConv {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("{name}: kernel size must be odd, got {k}")));
        }
        let weight = init.fan_in(format!("{name}.weight"), Shape { n: channels, c: 1, h: k, w: k }, k * k)?;
        Ok(Self { weight, channels, k, stride: 1, padding: k / 2 })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.depthwise_conv2d(x, w, self.stride, self.padding)
    }
}

impl ParamCount for DepthwiseConv {
    fn param_count(&self) -> usize {
        depthwise_param_count(self.k, self.channels)
    }
}

#[derive(Debug, Clone)]
pub struct PointwiseConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl PointwiseConv {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = init.fan_in(format!("{name}.weight"), Shape { n: c_out, c: c_in, h: 1, w: 1 }, c_in)?;
        let bias = Some(init.constant(format!("{name}.bias"), channel_shape(c_out), 0.0)?);
        Ok(Self { weight, bias, c_in, c_out })
    }

    /// All-zero weights and bias.
    pub fn zeros<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = init.constant(format!("{name}.weight"), Shape { n: c_out, c: c_in, h: 1, w: 1 }, 0.0)?;
        let bias = Some(init.constant(format!("{name}.bias"), channel_shape(c_out), 0.0)?);
        Ok(Self { weight, bias, c_in, c_out })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.pointwise_conv2d(x, w, b)
    }
}

impl ParamCount for PointwiseConv {
    fn param_count(&self) -> usize {
        conv2d_param_count(1, self.c_in, self.c_out, self.bias.is_some())
    }
}

/// Depthwise k x k convolution followed by a pointwise channel mix.
#[derive(Debug, Clone)]
pub struct SeparableConv {
    pub depthwise: DepthwiseConv,
    pub pointwise: PointwiseConv,
}

impl SeparableConv {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            depthwise: DepthwiseConv::new(init, &format!("{name}.dw"), c_in, k)?,
            pointwise: PointwiseConv::new(init, &format!("{name}.pw"), c_in, c_out)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let d = self.depthwise.forward(g, store, x)?;
        self.pointwise.forward(g, store, d)
    }
}

impl ParamCount for SeparableConv {
    fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!("{name}: {channels} channels not divisible by {groups} groups")));
        }
        let gamma = init.constant(format!("{name}.gamma"), channel_shape(channels), 1.0)?;
        let beta = init.constant(format!("{name}.beta"), channel_shape(channels), 0.0)?;
        Ok(Self { gamma, beta, channels, groups, eps: DEFAULT_GN_EPS })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups, self.eps)
    }
}

impl ParamCount for GroupNorm {
    fn param_count(&self) -> usize {
        group_norm_param_count(self.channels)
    }
}

/// 2x2 attention pooling with a learned single-channel score map.
///
/// Score weights start at zero, so a fresh layer is exactly average pooling.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub score: PointwiseConv,
}

impl AttentionPool {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self { score: PointwiseConv::zeros(init, &format!("{name}.score"), channels, 1)? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let logits = self.score.forward(g, store, x)?;
        g.attention_pool_2x(x, logits)
    }
}

impl ParamCount for AttentionPool {
    fn param_count(&self) -> usize {
        self.score.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> (ParamStore<f64>, SplitMix64) {
        (ParamStore::new(), SplitMix64::new(0))
    }

    #[test]
    fn closed_forms_match_enumeration() {
        let (mut store, mut rng) = fresh();
        let mut init = Init::new(&mut store, &mut rng);
        let conv = Conv2d::new(&mut init, "c", ConvSpec::same(64, 128, 3)).unwrap();
        let dw = DepthwiseConv::new(&mut init, "d", 64, 3).unwrap();
        let gn = GroupNorm::new(&mut init, "g", 32, 8).unwrap();
        let sep = SeparableConv::new(&mut init, "s", 64, 128, 3).unwrap();
        let ap = AttentionPool::new(&mut init, "a", 16).unwrap();

        let count = |prefix: &str| -> usize {
            store.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.value.len()).sum()
        };
        assert_eq!(conv.param_count(), 73_856);
        assert_eq!(count("c."), 73_856);
        assert_eq!(dw.param_count(), 576);
        assert_eq!(count("d."), 576);
        assert_eq!(gn.param_count(), 64);
        assert_eq!(count("g."), 64);
        assert_eq!(sep.param_count(), 8_896);
        assert_eq!(count("s."), 8_896);
        assert_eq!(ap.param_count(), 17);
        assert_eq!(count("a."), 17);
    }

    #[test]
    fn even_kernel_rejected() {
        let (mut store, mut rng) = fresh();
        let mut init = Init::new(&mut store, &mut rng);
        assert!(Conv2d::new(&mut init, "c", ConvSpec::same(1, 1, 2)).is_err());
        assert!(DepthwiseConv::new(&mut init, "d", 1, 4).is_err());
    }

    #[test]
    fn fresh_attention_pool_is_average() {
        let (mut store, mut rng) = fresh();
        let ap = AttentionPool::new(&mut Init::new(&mut store, &mut rng), "a", 2).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(Shape::new(1, 2, 4, 4).unwrap(), -1.0, 1.0, &mut rng));
        let y = ap.forward(&mut g, &store, x).unwrap();
        let xv = g.value(x);
        let expect = (xv.at(0, 1, 2, 2) + xv.at(0, 1, 2, 3) + xv.at(0, 1, 3, 2) + xv.at(0, 1, 3, 3)) * 0.25;
        assert!((g.value(y).at(0, 1, 1, 1) - expect).abs() < 1e-15);
    }
}
