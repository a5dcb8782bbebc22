//! Seeded desk-scale stand-in for dermoscopy data: one filled blob on a
//! smooth background, optionally with dark hair-like strokes and noise.
//!
//! Geometry is integer-only so masks are identical on every platform.

use std::fmt;
use std::str::FromStr;

use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    /// Ellipse or rectangle with equal odds.
    Mixed,
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Mixed => "mixed",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(ShapeKind::Ellipse),
            "rectangle" => Ok(ShapeKind::Rectangle),
            "mixed" => Ok(ShapeKind::Mixed),
            other => Err(Error::Parse(format!("unknown shape kind `{other}` (expected ellipse|rectangle|mixed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Square side in pixels.
    pub size: usize,
    pub shapes: ShapeKind,
    /// Standard deviation of additive Gaussian noise, in intensity units.
    pub noise: f64,
    pub hair: bool,
    pub gradient: bool,
    /// 1 (PGM) or 3 (PPM).
    pub channels: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 16,
            size: 64,
            shapes: ShapeKind::Mixed,
            noise: 0.03,
            hair: true,
            gradient: true,
            channels: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("synthetic size must be >= 8, got {}", self.size)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("synthetic channels must be 1 or 3, got {}", self.channels)));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// `key = value` lines describing the spec.
    pub fn to_text(&self) -> String {
        format!(
            "count = {}\nsize = {}\nshapes = {}\nnoise = {}\nhair = {}\ngradient = {}\nchannels = {}\nseed = {}\n",
            self.count, self.size, self.shapes, self.noise, self.hair, self.gradient, self.channels, self.seed
        )
    }
}

/// Background tops out at 0.45 and the blob starts at 0.55, so with no noise
/// and no hair a single threshold recovers the mask.
const BG_RANGE: (f64, f64) = (0.15, 0.30);
const GRADIENT_MAX: f64 = 0.15;
const FG_RANGE: (f64, f64) = (0.55, 0.85);
const HAIR_LEVEL: f64 = 0.05;

fn blob(rng: &mut SplitMix64, size: usize, kind: ShapeKind) -> BinaryMask {
    let s = size as i64;
    let cy = rng.range_inclusive(s / 4, 3 * s / 4);
    let cx = rng.range_inclusive(s / 4, 3 * s / 4);
    let ellipse = match kind {
        ShapeKind::Ellipse => true,
        ShapeKind::Rectangle => false,
        ShapeKind::Mixed => rng.next_u64() & 1 == 0,
    };
    if ellipse {
        // radii in [0.15 S, 0.35 S]
        let (lo, hi) = (((15 * s + 99) / 100).max(1), (35 * s / 100).max(1));
        let ry = rng.range_inclusive(lo, hi);
        let rx = rng.range_inclusive(lo, hi);
        let r2 = (ry * rx) * (ry * rx);
        BinaryMask::from_fn(size, size, |y, x| {
            let (dy, dx) = (y as i64 - cy, x as i64 - cx);
            dy * dy * rx * rx + dx * dx * ry * ry <= r2
        })
    } else {
        // half extents in [0.13 S, 0.30 S]
        let (lo, hi) = (((13 * s + 99) / 100).max(1), (30 * s / 100).max(1));
        let hy = rng.range_inclusive(lo, hi);
        let hx = rng.range_inclusive(lo, hi);
        BinaryMask::from_fn(size, size, |y, x| (y as i64 - cy).abs() <= hy && (x as i64 - cx).abs() <= hx)
    }
}

/// Marks a 1-pixel-wide straight stroke between two points.
fn stroke(hair: &mut [bool], size: usize, (y0, x0): (i64, i64), (y1, x1): (i64, i64)) {
    let (dy, dx) = ((y1 - y0).abs(), (x1 - x0).abs());
    let (sy, sx) = (if y0 < y1 { 1 } else { -1 }, if x0 < x1 { 1 } else { -1 });
    let (mut y, mut x, mut err) = (y0, x0, dx - dy);
    loop {
        if (0..size as i64).contains(&y) && (0..size as i64).contains(&x) {
            hair[y as usize * size + x as usize] = true;
        }
        if (y, x) == (y1, x1) {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dy {
            err -= dy;
            x += sx;
        }
        if e2 < dx {
            err += dx;
            y += sy;
        }
    }
}

fn one_sample(spec: &SyntheticSpec, index: usize, rng: &mut SplitMix64) -> Result<SamplePair> {
    let size = spec.size;
    let mask = blob(rng, size, spec.shapes);
    let bg = rng.uniform(BG_RANGE.0, BG_RANGE.1);
    let fg = rng.uniform(FG_RANGE.0, FG_RANGE.1);
    let (gy, gx) = if spec.gradient {
        let amp = rng.uniform(0.0, GRADIENT_MAX);
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        (amp * angle.sin(), amp * angle.cos())
    } else {
        (0.0, 0.0)
    };
    let tints: Vec<f64> =
        (0..spec.channels).map(|_| if spec.channels == 1 { 1.0 } else { rng.uniform(0.85, 1.0) }).collect();

    let mut hair = vec![false; size * size];
    if spec.hair {
        let s = size as i64;
        let strokes = rng.range_inclusive(1, 3);
        for _ in 0..strokes {
            let a = (rng.range_inclusive(0, s - 1), rng.range_inclusive(0, s - 1));
            let b = (rng.range_inclusive(0, s - 1), rng.range_inclusive(0, s - 1));
            stroke(&mut hair, size, a, b);
        }
    }

    let shape = Shape { n: 1, c: spec.channels, h: size, w: size };
    let mut data = vec![0.0f32; shape.numel()];
    let denom = (size - 1) as f64;
    for (c, &tint) in tints.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                // ramp spans [0, |g|] across the image whatever its direction
                let ty = if gy >= 0.0 { y as f64 } else { (size - 1 - y) as f64 } / denom;
                let tx = if gx >= 0.0 { x as f64 } else { (size - 1 - x) as f64 } / denom;
                let ramp = (gy.abs() * ty + gx.abs() * tx) / 2.0_f64.sqrt();
                let mut v = if mask.get(y, x) { fg } else { bg + ramp };
                if hair[y * size + x] {
                    v = HAIR_LEVEL;
                }
                v *= tint;
                if spec.noise > 0.0 {
                    v += spec.noise * rng.normal();
                }
                let q = (v.clamp(0.0, 1.0) * 255.0).round();
                data[shape.index(0, c, y, x)] = q as f32 / 255.0;
            }
        }
    }
    SamplePair::new(format!("synth_{index:05}"), Tensor::from_vec(shape, data)?, mask)
}

/// Generates `spec.count` samples. Sample `i` draws from its own stream
/// forked off the spec seed, so samples do not depend on `count`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    let mut root = SplitMix64::new(spec.seed);
    let streams: Vec<SplitMix64> = (0..spec.count).map(|i| root.fork(i as u64)).collect();
    streams.into_iter().enumerate().map(|(i, mut rng)| one_sample(spec, i, &mut rng)).collect()
}
