use super::block::{AttentionGate, BasicBlock, BlockConfig};
use super::config::{ModelConfig, PoolingKind};
use crate::autodiff::{Graph, HasParams, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{conv2d_param_count, AttentionPool, Init, ParamCount, PointwiseConv};
use crate::rng::SplitMix64;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub enum Downsample {
    Max,
    Attention(AttentionPool),
}

#[derive(Debug, Clone)]
pub struct EncoderLevel {
    pub block: BasicBlock,
    pub pool: Downsample,
}

/// Upsample, reduce channels, gate the skip, concatenate, block.
#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub reduce: PointwiseConv,
    pub gate: Option<AttentionGate>,
    pub block: BasicBlock,
}

/// Parameter count of one named layer group, alongside the count it would
/// have with standard k x k convolutions in place of separable ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub params: usize,
    pub standard_params: usize,
}

/// Intermediate maps exposed for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Gate attention maps, deepest decoder level first.
    pub gate_maps: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct HybridUNet<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub encoders: Vec<EncoderLevel>,
    pub bottleneck: BasicBlock,
    /// Deepest level first.
    pub decoders: Vec<DecoderLevel>,
    pub head: PointwiseConv,
}

impl<T: Real> HybridUNet<T> {
    /// Builds the network with deterministic seeded initialization.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut params = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let mut init = Init::new(&mut params, &mut rng);
        let block = |c_in: usize, c_out: usize| BlockConfig {
            c_in,
            c_out,
            depth: cfg.block_depth,
            groups: cfg.groups_for(c_out),
            slope: cfg.leaky_slope,
            residual: cfg.residual,
            kernel: cfg.kernel,
        };

        let mut encoders = Vec::with_capacity(cfg.levels);
        let mut c_prev = cfg.in_channels;
        for (l, &c) in cfg.channels.iter().enumerate() {
            let b = BasicBlock::new(&mut init, &format!("enc.{l}.block"), block(c_prev, c))?;
            let pool = match cfg.pooling {
                PoolingKind::Max => Downsample::Max,
                PoolingKind::Attention => {
                    Downsample::Attention(AttentionPool::new(&mut init, &format!("enc.{l}.pool"), c)?)
                }
            };
            encoders.push(EncoderLevel { block: b, pool });
            c_prev = c;
        }
        let bottleneck = BasicBlock::new(&mut init, "bottleneck", block(c_prev, cfg.bottleneck))?;

        let mut decoders = Vec::with_capacity(cfg.levels);
        let mut c_below = cfg.bottleneck;
        for l in (0..cfg.levels).rev() {
            let c = cfg.channels[l];
            let reduce = PointwiseConv::new(&mut init, &format!("dec.{l}.up"), c_below, c)?;
            let gate = if cfg.attention_gates {
                Some(AttentionGate::new(&mut init, &format!("dec.{l}.gate"), c, c, cfg.leaky_slope)?)
            } else {
                None
            };
            let b = BasicBlock::new(&mut init, &format!("dec.{l}.block"), block(2 * c, c))?;
            decoders.push(DecoderLevel { reduce, gate, block: b });
            c_below = c;
        }
        let head = PointwiseConv::new(&mut init, "head", cfg.channels[0], cfg.classes)?;
        Ok(Self { config: cfg, params, encoders, bottleneck, decoders, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Checks channel count and that every encoder level can halve the input.
    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = dims;
        if c != self.config.in_channels {
            return Err(Error::ChannelMismatch { op: "model input", expected: self.config.in_channels, got: c });
        }
        let (mut lh, mut lw) = (h, w);
        for level in 0..self.config.levels {
            if lh % 2 != 0 || lw % 2 != 0 || lh == 0 || lw == 0 {
                return Err(Error::InvalidShape(format!(
                    "input {h}x{w} is not divisible by {} ({}-level encoder): level {level} receives {lh}x{lw}, which cannot be halved",
                    self.config.size_multiple(),
                    self.config.levels
                )));
            }
            lh /= 2;
            lw /= 2;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, x)?.logits)
    }

    /// Forward pass returning per-pixel logits `[n, classes, h, w]`.
    pub fn forward_traced(&self, g: &mut Graph<T>, x: Var) -> Result<ForwardTrace> {
        self.check_input(g.shape(x).dims())?;
        let p = &self.params;
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x;
        for enc in &self.encoders {
            let s = enc.block.forward(g, p, h)?;
            skips.push(s);
            h = match &enc.pool {
                Downsample::Max => g.max_pool_2x(s)?,
                Downsample::Attention(ap) => ap.forward(g, p, s)?,
            };
        }
        h = self.bottleneck.forward(g, p, h)?;
        let mut gate_maps = Vec::new();
        for (dec, &skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let up = g.upsample_nearest_2x(h)?;
            let up = dec.reduce.forward(g, p, up)?;
            let gated = match &dec.gate {
                Some(gate) => {
                    let (gated, alpha) = gate.forward(g, p, skip, up)?;
                    gate_maps.push(alpha);
                    gated
                }
                None => skip,
            };
            let cat = g.concat(gated, up)?;
            h = dec.block.forward(g, p, cat)?;
        }
        let logits = self.head.forward(g, p, h)?;
        Ok(ForwardTrace { logits, gate_maps })
    }

    /// Logits for a batch, without keeping the tape.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-layer-group parameter counts in registration order.
    pub fn layer_counts(&self) -> Vec<LayerCount> {
        let k = self.config.kernel;
        let block_counts = |name: String, b: &BasicBlock| {
            let standard: usize = b.entry.param_count()
                + b.layers
                    .iter()
                    .map(|l| {
                        conv2d_param_count(k, l.conv.depthwise.channels, l.conv.pointwise.c_out, true)
                            + l.norm.param_count()
                    })
                    .sum::<usize>();
            LayerCount { name, params: b.param_count(), standard_params: standard }
        };
        let plain = |name: String, n: usize| LayerCount { name, params: n, standard_params: n };

        let mut out = Vec::new();
        for (l, enc) in self.encoders.iter().enumerate() {
            out.push(block_counts(format!("enc.{l}.block"), &enc.block));
            if let Downsample::Attention(ap) = &enc.pool {
                out.push(plain(format!("enc.{l}.pool"), ap.param_count()));
            }
        }
        out.push(block_counts("bottleneck".into(), &self.bottleneck));
        for (dec, l) in self.decoders.iter().zip((0..self.config.levels).rev()) {
            out.push(plain(format!("dec.{l}.up"), dec.reduce.param_count()));
            if let Some(gate) = &dec.gate {
                out.push(plain(format!("dec.{l}.gate"), gate.param_count()));
            }
            out.push(block_counts(format!("dec.{l}.block"), &dec.block));
        }
        out.push(plain("head".into(), self.head.param_count()));
        out
    }

    /// Total learnable scalars, from the per-layer closed forms.
    pub fn param_count(&self) -> usize {
        self.layer_counts().iter().map(|c| c.params).sum()
    }

    /// Total with standard k x k convolutions in place of the separable ones.
    pub fn standard_equivalent_count(&self) -> usize {
        self.layer_counts().iter().map(|c| c.standard_params).sum()
    }
}

impl<T: Real> HasParams<T> for HybridUNet<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
}
