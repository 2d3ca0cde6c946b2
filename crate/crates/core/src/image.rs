//! 8-bit raster images and binary PGM/PPM I/O.
//!
//! Resolution travels in a comment line placed right after the magic:
//!
//! ```text
//! P5
//! # ppi 500 500
//! 400 400
//! 255
//! ```
//!
//! A file without that line is treated as uncalibrated.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Pixels-per-inch along both axes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ppi {
    pub x: f64,
    pub y: f64,
}

impl Ppi {
    pub fn uniform(v: f64) -> Self {
        Ppi { x: v, y: v }
    }
}

/// Row-major 8-bit image with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    ppi: Option<Ppi>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(RasterImage { width, height, channels, data, ppi: None })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    /// Single-channel image filled with `value`.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        RasterImage { width, height, channels: 1, data: vec![value; width * height], ppi: None }
    }

    /// Builds a grayscale image from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut img = Self::filled(width, height, 0);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn with_ppi(mut self, ppi: Option<Ppi>) -> Result<Self> {
        if let Some(p) = ppi {
            if !(p.x > 0.0 && p.y > 0.0) || !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::invalid(format!("ppi must be positive, got {} x {}", p.x, p.y)));
            }
        }
        self.ppi = ppi;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ppi(&self) -> Option<Ppi> {
        self.ppi
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    /// Gray value at `(x, y)`. Only meaningful for single-channel images.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample of a grayscale image; samples whose 2x2 support leaves
    /// the image return `fill`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        if !(x >= 0.0 && y >= 0.0) {
            return fill;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let (xi, yi) = (x0 as usize, y0 as usize);
        if xi >= self.width || yi >= self.height {
            return fill;
        }
        let fx = x - x0;
        let fy = y - y0;
        // Exact hits on the last row/column do not need the neighbour.
        let xi1 = if fx == 0.0 { xi } else { xi + 1 };
        let yi1 = if fy == 0.0 { yi } else { yi + 1 };
        if xi1 >= self.width || yi1 >= self.height {
            return fill;
        }
        let w = self.width;
        let p00 = f64::from(self.data[yi * w + xi]);
        let p10 = f64::from(self.data[yi * w + xi1]);
        let p01 = f64::from(self.data[yi1 * w + xi]);
        let p11 = f64::from(self.data[yi1 * w + xi1]);
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Grayscale samples as `f32`.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v)).collect()
    }

    /// Encodes as binary PGM (gray) or PPM (color).
    pub fn to_netpbm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = Vec::with_capacity(self.data.len() + 64);
        let _ = writeln!(out, "{magic}");
        if let Some(p) = self.ppi {
            let _ = writeln!(out, "# ppi {} {}", p.x, p.y);
        }
        let _ = write!(out, "{} {}\n255\n", self.width, self.height);
        out.extend_from_slice(&self.data);
        out
    }

    /// Decodes binary PGM (P5) or PPM (P6) with maxval 255.
    pub fn from_netpbm(bytes: &[u8]) -> Result<Self> {
        let mut parser = HeaderParser { bytes, pos: 0 };
        let magic = parser.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::ImageFormat(format!("unsupported magic `{other}`"))),
        };
        let ppi = parser.ppi_comment()?;
        let width = parser.number()?;
        let height = parser.number()?;
        let maxval = parser.number()?;
        if maxval != 255 {
            return Err(Error::ImageFormat(format!("maxval {maxval} unsupported, expected 255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(parser.pos) {
            Some(c) if c.is_ascii_whitespace() => parser.pos += 1,
            _ => return Err(Error::ImageFormat("missing raster separator".into())),
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::ImageFormat("image dimensions overflow".into()))?;
        let raster = &bytes[parser.pos..];
        if raster.len() < expected {
            return Err(Error::ImageFormat(format!(
                "truncated raster: {} of {expected} bytes",
                raster.len()
            )));
        }
        let img = RasterImage::new(width, height, channels, raster[..expected].to_vec())
            .map_err(|e| Error::ImageFormat(e.to_string()))?;
        img.with_ppi(ppi).map_err(|e| Error::ImageFormat(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::from_netpbm(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_netpbm())?;
        Ok(())
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'#' {
                self.skip_line();
            } else {
                break;
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            self.pos += 1;
            if c == b'\n' {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_whitespace() || c == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::ImageFormat("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::ImageFormat(format!("bad header number `{tok}`")))
    }

    /// Reads a `# ppi X Y` line if it is the first thing after the magic.
    fn ppi_comment(&mut self) -> Result<Option<Ppi>> {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.bytes.get(self.pos) != Some(&b'#') {
            return Ok(None);
        }
        let start = self.pos;
        self.skip_line();
        let line = String::from_utf8_lossy(&self.bytes[start..self.pos]);
        let mut parts = line.trim_start_matches('#').split_whitespace();
        if parts.next() != Some("ppi") {
            return Ok(None);
        }
        let mut next = || -> Result<f64> {
            parts
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::ImageFormat(format!("malformed ppi comment `{}`", line.trim())))
        };
        let x = next()?;
        let y = next()?;
        Ok(Some(Ppi { x, y }))
    }
}
