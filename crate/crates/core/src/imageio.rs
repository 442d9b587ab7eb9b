//! Grayscale rasters and binary PGM (P5, 8-bit) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Real-valued grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, found: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Rounds half away from zero and clamps to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format { offset: self.pos, message: message.into() })
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
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
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().or_else(|_| {
            self.pos = start;
            self.fail(format!("{what} out of range"))
        })
    }
}

/// Parses a binary PGM with maxval 255. Header comments are allowed.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return cur.fail("expected magic number P5");
    }
    cur.pos = 2;
    if !cur.bytes.get(cur.pos).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return cur.fail("expected whitespace after magic number");
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    if width == 0 || height == 0 {
        return cur.fail("image dimensions must be positive");
    }
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        cur.pos = maxval_at;
        cur.skip_space_and_comments();
        return cur.fail(format!("maxval must be 255, got {maxval}"));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return cur.fail("expected a single whitespace byte before the pixel data");
    }
    cur.pos += 1;
    let count =
        width.checked_mul(height).ok_or(Error::Format { offset: cur.pos, message: "image too large".into() })?;
    let payload = &bytes[cur.pos..];
    if payload.len() < count {
        cur.pos = bytes.len();
        return cur.fail(format!("truncated pixel data: expected {count} bytes, found {}", payload.len()));
    }
    GrayImage::new(width, height, payload[..count].iter().map(|&b| f64::from(b)).collect())
}

/// Encodes with the header `P5\n<width> <height>\n255\n`.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&v| quantize(v)));
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pgm(&fs::read(path)?)
}

pub fn save_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    fs::write(path, write_pgm(image))?;
    Ok(())
}
