//! Image and mask I/O, preprocessing, dataset splits and synthetic data.

pub mod pnm;
mod split;
mod synthetic;

use std::path::{Path, PathBuf};

pub use pnm::RawImage;
pub use split::{split_dataset, DatasetSplit};
pub use synthetic::{gen_synthetic, ShapeKind, SyntheticSpec};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape, Tensor};

/// Image `[1, c, h, w]` in [0, 1] with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: BinaryMask) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || (s.h, s.w) != (mask.height(), mask.width()) {
            return Err(Error::Dataset(format!(
                "image {s} does not pair with a {}x{} mask",
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self { id: id.into(), image, mask })
    }
}

pub fn image_from_raw(raw: &RawImage) -> Tensor<f32> {
    let shape = Shape { n: 1, c: raw.channels, h: raw.height, w: raw.width };
    let mut data = vec![0.0f32; shape.numel()];
    for c in 0..raw.channels {
        for y in 0..raw.height {
            for x in 0..raw.width {
                data[shape.index(0, c, y, x)] = raw.get(y, x, c) as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(shape, data).expect("raw image extents")
}

/// Inverse of [`image_from_raw`] for values on the 1/255 grid; other values
/// are rounded after clamping to [0, 1].
pub fn image_to_raw(image: &Tensor<f32>) -> RawImage {
    let s = image.shape();
    let mut pixels = vec![0u8; s.plane() * s.c];
    for c in 0..s.c {
        for y in 0..s.h {
            for x in 0..s.w {
                let v = image.at(0, c, y, x).clamp(0.0, 1.0);
                pixels[(y * s.w + x) * s.c + c] = (v * 255.0).round() as u8;
            }
        }
    }
    RawImage::new(s.w, s.h, s.c, pixels).expect("tensor extents")
}

pub fn mask_from_raw(raw: &RawImage) -> Result<BinaryMask> {
    if raw.channels != 1 {
        return Err(Error::Dataset("masks must be single-channel PGM".into()));
    }
    BinaryMask::new(raw.height, raw.width, raw.pixels.iter().map(|&v| v > 127).collect())
}

pub fn mask_to_raw(mask: &BinaryMask) -> RawImage {
    let pixels = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    RawImage::new(mask.width(), mask.height(), 1, pixels).expect("mask extents")
}

/// Reads a P5 or P6 file as a `[1, c, h, w]` tensor scaled by 1/255.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    Ok(image_from_raw(&pnm::read(path)?))
}

/// Reads a P5 file; samples above 127 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    mask_from_raw(&pnm::read(path)?)
}

/// Nearest-neighbour source index for output index `dst` when mapping `src_len`
/// samples onto `dst_len`: the source pixel containing the output pixel centre.
fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (2 * dst + 1) * src_len / (2 * dst_len)
}

/// Crops the largest centred square, then resizes image and mask to
/// `target x target` with the same nearest-neighbour mapping.
pub fn preprocess(pair: &SamplePair, target: usize, allow_upscale: bool) -> Result<SamplePair> {
    let s = pair.image.shape();
    if target == 0 {
        return Err(Error::Config("resize target must be >= 1".into()));
    }
    let side = s.h.min(s.w);
    if target > side && !allow_upscale {
        return Err(Error::Config(format!(
            "target {target}x{target} is larger than the {side}x{side} centre crop of {}x{} and upscaling is disabled",
            s.h, s.w
        )));
    }
    let (y0, x0) = ((s.h - side) / 2, (s.w - side) / 2);
    let map: Vec<usize> = (0..target).map(|d| nearest(d, side, target)).collect();
    let out_shape = Shape { n: 1, c: s.c, h: target, w: target };
    let mut data = Vec::with_capacity(out_shape.numel());
    for c in 0..s.c {
        for &sy in &map {
            for &sx in &map {
                data.push(pair.image.at(0, c, y0 + sy, x0 + sx));
            }
        }
    }
    let mask = BinaryMask::from_fn(target, target, |y, x| pair.mask.get(y0 + map[y], x0 + map[x]));
    SamplePair::new(pair.id.clone(), Tensor::from_vec(out_shape, data)?, mask)
}

/// Stacks images into a batch `[n, c, h, w]` and masks into `[n, 1, h, w]`.
pub fn batch<'a>(pairs: impl IntoIterator<Item = &'a SamplePair>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let pairs: Vec<&SamplePair> = pairs.into_iter().collect();
    let images: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.image).collect();
    let masks: Vec<Tensor<f32>> = pairs.iter().map(|p| p.mask.to_tensor()).collect();
    let masks: Vec<&Tensor<f32>> = masks.iter().collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

pub fn images_dir(root: &Path) -> PathBuf {
    root.join("images")
}

pub fn masks_dir(root: &Path) -> PathBuf {
    root.join("masks")
}

/// Writes `root/images/<id>.pgm|ppm` and `root/masks/<id>.pgm`.
pub fn write_dataset(root: &Path, pairs: &[SamplePair]) -> Result<()> {
    let (images, masks) = (images_dir(root), masks_dir(root));
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for p in pairs {
        let raw = image_to_raw(&p.image);
        let ext = if raw.channels == 1 { "pgm" } else { "ppm" };
        pnm::write(&images.join(format!("{}.{ext}", p.id)), &raw)?;
        pnm::write(&masks.join(format!("{}.pgm", p.id)), &mask_to_raw(&p.mask))?;
    }
    Ok(())
}

/// Loads every image under `root/images` with its same-stem mask, sorted by
/// id. With `resize`, each pair goes through [`preprocess`].
pub fn load_dataset(root: &Path, resize: Option<usize>) -> Result<Vec<SamplePair>> {
    let (images, masks) = (images_dir(root), masks_dir(root));
    for dir in [&images, &masks] {
        if !dir.is_dir() {
            return Err(Error::Dataset(format!("missing directory {}", dir.display())));
        }
    }
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&images)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("pgm" | "ppm")) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("image file name is not valid UTF-8: {}", path.display())))?;
        entries.push((stem.to_string(), path));
    }
    entries.sort();
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Dataset(format!("id {} has both a .pgm and a .ppm image", w[0].0)));
    }
    entries
        .into_iter()
        .map(|(id, path)| {
            let mask_path = masks.join(format!("{id}.pgm"));
            if !mask_path.is_file() {
                return Err(Error::Dataset(format!("image {id} has no mask at {}", mask_path.display())));
            }
            let pair = SamplePair::new(id, load_image(&path)?, load_mask(&mask_path)?)?;
            match resize {
                Some(t) => preprocess(&pair, t, false),
                None => Ok(pair),
            }
        })
        .collect()
}
