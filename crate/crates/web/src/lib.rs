//! Browser bindings for three small demos: drawing a synthetic sample,
//! scoring a shifted copy of its mask, and counting model parameters.

use dsunet::data::{gen_synthetic, ShapeKind, SyntheticSpec};
use dsunet::metrics::{BinaryMask, MetricsReport};
use dsunet::model::{HybridUNet, ModelConfig, PoolingKind};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// One generated image and its mask.
#[wasm_bindgen]
pub struct Sample {
    size: usize,
    gray: Vec<f32>,
    mask: BinaryMask,
}

#[wasm_bindgen]
impl Sample {
    /// `shapes` is `ellipse`, `rectangle` or `mixed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: usize, shapes: &str, noise: f64, hair: bool) -> Result<Sample, JsError> {
        let spec = SyntheticSpec {
            count: 1,
            size,
            shapes: shapes.parse::<ShapeKind>().map_err(js_err)?,
            noise,
            hair,
            seed: seed.into(),
            ..Default::default()
        };
        let pair = gen_synthetic(&spec).map_err(js_err)?.remove(0);
        Ok(Sample { size, gray: pair.image.data().to_vec(), mask: pair.mask })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// RGBA pixels of the image with the mask outline in red.
    pub fn image_rgba(&self) -> Vec<u8> {
        let edge = outline(&self.mask);
        let mut out = Vec::with_capacity(self.gray.len() * 4);
        for (i, &v) in self.gray.iter().enumerate() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend_from_slice(&if edge[i] { [230, 40, 40, 255] } else { [g, g, g, 255] });
        }
        out
    }

    /// Scores the mask moved by `(dy, dx)` against the original and returns
    /// an RGBA overlay: overlap white, misses blue, false alarms orange.
    pub fn shift_metrics(&self, dy: i32, dx: i32) -> Result<ShiftResult, JsError> {
        let pred = shifted(&self.mask, dy as isize, dx as isize);
        let report = MetricsReport::compute(&pred, &self.mask).map_err(js_err)?;
        let rgba = pred
            .bits()
            .iter()
            .zip(self.mask.bits())
            .flat_map(|(&p, &g)| match (p, g) {
                (true, true) => [245, 245, 245, 255],
                (false, true) => [50, 110, 220, 255],
                (true, false) => [240, 150, 30, 255],
                (false, false) => [20, 20, 20, 255],
            })
            .collect();
        Ok(ShiftResult { report, rgba })
    }
}

#[wasm_bindgen]
pub struct ShiftResult {
    report: MetricsReport,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl ShiftResult {
    #[wasm_bindgen(getter)]
    pub fn dice(&self) -> f64 {
        self.report.dice
    }

    #[wasm_bindgen(getter)]
    pub fn iou(&self) -> f64 {
        self.report.iou
    }

    /// NaN when a boundary is empty.
    #[wasm_bindgen(getter)]
    pub fn assd(&self) -> f64 {
        self.report.assd.unwrap_or(f64::NAN)
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

fn outline(mask: &BinaryMask) -> Vec<bool> {
    let mut edge = vec![false; mask.bits().len()];
    for (y, x) in dsunet::metrics::boundary(mask) {
        edge[y * mask.width() + x] = true;
    }
    edge
}

fn shifted(mask: &BinaryMask, dy: isize, dx: isize) -> BinaryMask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| {
        let (sy, sx) = (y as isize - dy, x as isize - dx);
        (0..h).contains(&sy) && (0..w).contains(&sx) && mask.get(sy as usize, sx as usize)
    })
}

#[wasm_bindgen]
pub struct ParamSummary {
    pub params: usize,
    pub standard: usize,
}

#[wasm_bindgen]
impl ParamSummary {
    /// Percentage saved relative to standard convolutions.
    #[wasm_bindgen(getter)]
    pub fn reduction(&self) -> f64 {
        100.0 * (1.0 - self.params as f64 / self.standard as f64)
    }
}

/// Counts for a model whose widths start at `base` and double per level,
/// with a bottleneck twice the deepest width.
#[wasm_bindgen]
pub fn param_summary(
    levels: usize,
    base: usize,
    block_depth: usize,
    residual: bool,
    attention_pooling: bool,
    gates: bool,
) -> Result<ParamSummary, JsError> {
    let channels: Vec<usize> = (0..levels).map(|l| base << l).collect();
    let config = ModelConfig {
        levels,
        bottleneck: channels.last().map_or(base, |c| 2 * c),
        channels,
        block_depth,
        residual,
        pooling: if attention_pooling { PoolingKind::Attention } else { PoolingKind::Max },
        attention_gates: gates,
        ..Default::default()
    };
    let model = HybridUNet::<f32>::build(&config, 0).map_err(js_err)?;
    Ok(ParamSummary { params: model.param_count(), standard: model.standard_equivalent_count() })
}
