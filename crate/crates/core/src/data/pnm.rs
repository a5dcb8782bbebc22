//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved row-major samples.
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidShape(format!("images need 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * channels {
            return Err(Error::InvalidShape(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, reason: reason.into() }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => self.fail(format!("file ends before {what}")),
                Some(_) => self.fail(format!("expected {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format { offset: start, reason: format!("{what} out of range") })
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.fail("not a binary PGM/PPM (expected P5 or P6 magic)")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format { offset: maxval_at, reason: format!("zero extent {width}x{height}") });
    }
    if maxval != 255 {
        return Err(Error::Format { offset: maxval_at, reason: format!("unsupported maxval {maxval} (only 255)") });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(cur.fail("expected whitespace after maxval")),
        None => return Err(cur.fail("file ends before pixel data")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| cur.fail("image extents overflow"))?;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated pixel data: expected {need} bytes from offset {}, found {have}", cur.pos),
        });
    }
    let pixels = bytes[cur.pos..cur.pos + need].to_vec();
    RawImage::new(width, height, channels, pixels)
}

pub fn encode(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, reason } => Error::Format { offset, reason: format!("{}: {reason}", path.display()) },
        other => other,
    })
}

pub fn write(path: &Path, img: &RawImage) -> Result<()> {
    std::fs::write(path, encode(img))?;
    Ok(())
}
