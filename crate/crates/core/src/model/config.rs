use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingKind {
    Max,
    Attention,
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingKind::Max => "max",
            PoolingKind::Attention => "attention",
        })
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolingKind::Max),
            "attention" => Ok(PoolingKind::Attention),
            other => Err(Error::Parse(format!("unknown pooling `{other}` (expected max|attention)"))),
        }
    }
}

/// The three rows of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Depthwise separable convolutions, plain chained layers, max pooling.
    Dc,
    /// Adds the dense residual sums inside each block.
    DcRc,
    /// Adds attention pooling.
    DcRcAp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dc, Variant::DcRc, Variant::DcRcAp];

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Dc => "U-Net + DC",
            Variant::DcRc => "U-Net + DC + RC",
            Variant::DcRcAp => "U-Net + DC + RC + Attention Pooling",
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::Dc => "dc",
            Variant::DcRc => "dc-rc",
            Variant::DcRcAp => "dc-rc-ap",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.cli_name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant `{s}` (expected dc|dc-rc|dc-rc-ap)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    /// Block width at each encoder level, shallowest first.
    pub channels: Vec<usize>,
    pub bottleneck: usize,
    /// Number of 3x3 separable layers after each block's 1x1 entry conv.
    pub block_depth: usize,
    pub pooling: PoolingKind,
    pub residual: bool,
    pub attention_gates: bool,
    pub in_channels: usize,
    pub classes: usize,
    /// Upper bound on group-norm groups; a width-c layer uses min(gn_groups, c).
    pub gn_groups: usize,
    pub leaky_slope: f64,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            channels: vec![16, 32, 64, 128],
            bottleneck: 256,
            block_depth: 2,
            pooling: PoolingKind::Attention,
            residual: true,
            attention_gates: true,
            in_channels: 1,
            classes: 1,
            gn_groups: 8,
            leaky_slope: 0.01,
            kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn groups_for(&self, c: usize) -> usize {
        self.gn_groups.min(c)
    }

    /// Spatial extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels
    }

    /// Default widths with the given ablation components.
    pub fn variant(which: Variant) -> Self {
        Self::default().with_variant(which)
    }

    pub fn with_variant(mut self, which: Variant) -> Self {
        let (residual, pooling) = match which {
            Variant::Dc => (false, PoolingKind::Max),
            Variant::DcRc => (true, PoolingKind::Max),
            Variant::DcRcAp => (true, PoolingKind::Attention),
        };
        self.residual = residual;
        self.pooling = pooling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.levels == 0 {
            return fail("levels must be >= 1".into());
        }
        if self.levels > 10 {
            return fail(format!("levels = {} is unreasonably deep", self.levels));
        }
        if self.channels.len() != self.levels {
            return fail(format!("{} channel widths given for {} levels", self.channels.len(), self.levels));
        }
        let widths: Vec<usize> = self.channels.iter().copied().chain([self.bottleneck]).collect();
        if widths[0] == 0 {
            return fail("channel widths must be positive".into());
        }
        if let Some(w) = widths.windows(2).find(|w| w[1] <= w[0]) {
            return fail(format!("channel widths must strictly increase down the encoder ({} then {})", w[0], w[1]));
        }
        if self.gn_groups == 0 {
            return fail("gn_groups must be >= 1".into());
        }
        for &c in &widths {
            if c % self.groups_for(c) != 0 {
                return fail(format!("width {c} is not divisible by {} group-norm groups", self.groups_for(c)));
            }
        }
        if self.block_depth == 0 {
            return fail("block_depth must be >= 1".into());
        }
        if self.in_channels == 0 || self.classes == 0 {
            return fail("in_channels and classes must be >= 1".into());
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return fail(format!("leaky_slope must be finite and non-negative, got {}", self.leaky_slope));
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_explain_themselves() {
        let mut c = ModelConfig { channels: vec![16, 32, 32, 128], ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("strictly increase"));
        c.channels = vec![16, 32, 64];
        assert!(c.validate().unwrap_err().to_string().contains("3 channel widths"));
        let c = ModelConfig { channels: vec![12, 32, 64, 128], ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("divisible"));
        let c = ModelConfig { block_depth: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_rows() {
        let dc = ModelConfig::variant(Variant::Dc);
        assert!(!dc.residual);
        assert_eq!(dc.pooling, PoolingKind::Max);
        let rc = ModelConfig::variant(Variant::DcRc);
        assert!(rc.residual);
        assert_eq!(rc.pooling, PoolingKind::Max);
        let ap = ModelConfig::variant(Variant::DcRcAp);
        assert!(ap.residual);
        assert_eq!(ap.pooling, PoolingKind::Attention);
        for v in Variant::ALL {
            assert_eq!(v.cli_name().parse::<Variant>().unwrap(), v);
        }
    }
}
