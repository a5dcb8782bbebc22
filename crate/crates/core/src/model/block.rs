//! Densely summed basic block and the additive attention gate.

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{GroupNorm, Init, ParamCount, PointwiseConv, SeparableConv};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Number of separable layers after the entry conv.
    pub depth: usize,
    pub groups: usize,
    pub slope: f64,
    pub residual: bool,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub struct BlockLayer {
    pub conv: SeparableConv,
    pub norm: GroupNorm,
}

/// `x0 = conv1x1(x)`, then for `i = 1..=depth`:
/// `x_i = LeakyReLU(GN(sepconv3x3(x_0 + ... + x_{i-1})))`.
///
/// Without residual sums, layer `i` consumes `x_{i-1}` alone. The block emits
/// `x_depth`.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub entry: PointwiseConv,
    pub layers: Vec<BlockLayer>,
    pub cfg: BlockConfig,
}

impl BasicBlock {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, cfg: BlockConfig) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(Error::Config(format!("{name}: block depth must be >= 1")));
        }
        let entry = PointwiseConv::new(init, &format!("{name}.entry"), cfg.c_in, cfg.c_out)?;
        let layers = (0..cfg.depth)
            .map(|i| {
                Ok(BlockLayer {
                    conv: SeparableConv::new(
                        init,
                        &format!("{name}.layers.{i}.conv"),
                        cfg.c_out,
                        cfg.c_out,
                        cfg.kernel,
                    )?,
                    norm: GroupNorm::new(init, &format!("{name}.layers.{i}.norm"), cfg.c_out, cfg.groups)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entry, layers, cfg })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = g.shape(x).c;
        if c != self.cfg.c_in {
            return Err(Error::ChannelMismatch { op: "basic_block", expected: self.cfg.c_in, got: c });
        }
        let mut outputs = vec![self.entry.forward(g, store, x)?];
        for layer in &self.layers {
            let input = if self.cfg.residual { g.sum_all(&outputs)? } else { *outputs.last().expect("entry output") };
            let y = layer.conv.forward(g, store, input)?;
            let y = layer.norm.forward(g, store, y)?;
            outputs.push(g.leaky_relu(y, self.cfg.slope)?);
        }
        Ok(*outputs.last().expect("block output"))
    }
}

impl ParamCount for BasicBlock {
    fn param_count(&self) -> usize {
        self.entry.param_count()
            + self.layers.iter().map(|l| l.conv.param_count() + l.norm.param_count()).sum::<usize>()
    }
}

/// Additive soft-attention gate on a skip connection.
///
/// `alpha = sigmoid(psi(LeakyReLU(W_g g + W_x x)))` is a single-channel map in
/// (0, 1) that scales every channel of the skip features `x`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub w_g: PointwiseConv,
    pub w_x: PointwiseConv,
    pub psi: PointwiseConv,
    pub slope: f64,
}

impl AttentionGate {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_x: usize, c_g: usize, slope: f64) -> Result<Self> {
        let c_int = (c_x / 2).max(1);
        Ok(Self {
            w_g: PointwiseConv::new(init, &format!("{name}.w_g"), c_g, c_int)?,
            w_x: PointwiseConv::new(init, &format!("{name}.w_x"), c_x, c_int)?,
            psi: PointwiseConv::new(init, &format!("{name}.psi"), c_int, 1)?,
            slope,
        })
    }

    pub fn intermediate_channels(&self) -> usize {
        self.psi.c_in
    }

    /// Returns the gated skip features and the attention map.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_skip: Var,
        gating: Var,
    ) -> Result<(Var, Var)> {
        let (sx, sg) = (g.shape(x_skip), g.shape(gating));
        if (sx.n, sx.h, sx.w) != (sg.n, sg.h, sg.w) {
            return Err(Error::ShapeMismatch { op: "attention_gate", left: sx, right: sg });
        }
        let a = self.w_g.forward(g, store, gating)?;
        let b = self.w_x.forward(g, store, x_skip)?;
        let s = g.add(a, b)?;
        let s = g.leaky_relu(s, self.slope)?;
        let logits = self.psi.forward(g, store, s)?;
        let alpha = g.sigmoid(logits)?;
        Ok((g.mul(x_skip, alpha)?, alpha))
    }
}

impl ParamCount for AttentionGate {
    fn param_count(&self) -> usize {
        self.w_g.param_count() + self.w_x.param_count() + self.psi.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::{Shape, Tensor};

    fn block_cfg(c_in: usize, c_out: usize, residual: bool) -> BlockConfig {
        BlockConfig { c_in, c_out, depth: 2, groups: 8, slope: 0.01, residual, kernel: 3 }
    }

    #[test]
    fn block_count_matches_closed_form() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = SplitMix64::new(0);
        let b = BasicBlock::new(&mut Init::new(&mut store, &mut rng), "b", block_cfg(16, 32, true)).unwrap();
        assert_eq!(b.param_count(), 3_360);
        assert_eq!(store.numel(), 3_360);
    }

    #[test]
    fn depth_one_block_is_entry_then_layer() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SplitMix64::new(1);
        let cfg = BlockConfig { depth: 1, ..block_cfg(2, 8, true) };
        let b = BasicBlock::new(&mut Init::new(&mut store, &mut rng), "b", cfg).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(Shape::new(1, 2, 4, 4).unwrap(), -1.0, 1.0, &mut rng));
        let y = b.forward(&mut g, &store, x).unwrap();

        let mut h = Graph::new();
        let x2 = h.input(g.value(x).clone());
        let x0 = b.entry.forward(&mut h, &store, x2).unwrap();
        let l = &b.layers[0];
        let z = l.conv.forward(&mut h, &store, x0).unwrap();
        let z = l.norm.forward(&mut h, &store, z).unwrap();
        let z = h.leaky_relu(z, 0.01).unwrap();
        assert_eq!(g.value(y), h.value(z));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SplitMix64::new(1);
        let b = BasicBlock::new(&mut Init::new(&mut store, &mut rng), "b", block_cfg(3, 8, true)).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 2, 4, 4).unwrap()));
        assert!(matches!(b.forward(&mut g, &store, x), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn gate_intermediate_width() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SplitMix64::new(1);
        let mut init = Init::new(&mut store, &mut rng);
        assert_eq!(AttentionGate::new(&mut init, "a", 16, 16, 0.01).unwrap().intermediate_channels(), 8);
        assert_eq!(AttentionGate::new(&mut init, "b", 1, 4, 0.01).unwrap().intermediate_channels(), 1);
    }

    #[test]
    fn gate_spatial_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SplitMix64::new(1);
        let gate = AttentionGate::new(&mut Init::new(&mut store, &mut rng), "g", 4, 4, 0.01).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 4, 4, 4).unwrap()));
        let s = g.input(Tensor::zeros(Shape::new(1, 4, 2, 2).unwrap()));
        assert!(gate.forward(&mut g, &store, x, s).is_err());
    }
}
