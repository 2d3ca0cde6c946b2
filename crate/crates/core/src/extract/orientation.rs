use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::filters::{gaussian_blur, sobel, Integral};
use crate::image::RasterImage;

/// Gray-level variance below which a block counts as background.
pub const BACKGROUND_VARIANCE: f64 = 100.0;

/// Ridge orientation, coherence and foreground mask, both per block and
/// per pixel.
///
/// The per-pixel layer uses windows centred on each pixel, so it follows
/// whole-pixel translations of the image exactly; the block layer is a
/// coarse summary on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    block_size: usize,
    width: usize,
    height: usize,
    cols: usize,
    rows: usize,
    angles: Vec<f64>,
    coherence: Vec<f64>,
    foreground: Vec<bool>,
    dense_angles: Vec<f64>,
    dense_coherence: Vec<f64>,
    dense_foreground: Vec<bool>,
}

impl OrientationField {
    /// Field with a single orientation everywhere, fully foreground.
    ///
    /// Handy for feeding hand-built skeletons to the detector.
    pub fn uniform(width: usize, height: usize, block_size: usize, angle: f64, coherence: f64) -> Self {
        let cols = width.div_ceil(block_size);
        let rows = height.div_ceil(block_size);
        OrientationField {
            block_size,
            width,
            height,
            cols,
            rows,
            angles: vec![angle.rem_euclid(PI); cols * rows],
            coherence: vec![coherence.clamp(0.0, 1.0); cols * rows],
            foreground: vec![true; cols * rows],
            dense_angles: vec![angle.rem_euclid(PI); width * height],
            dense_coherence: vec![coherence.clamp(0.0, 1.0); width * height],
            dense_foreground: vec![true; width * height],
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Grid size as `(cols, rows)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn coherences(&self) -> &[f64] {
        &self.coherence
    }

    pub fn angle(&self, bx: usize, by: usize) -> f64 {
        self.angles[by * self.cols + bx]
    }

    pub fn coherence(&self, bx: usize, by: usize) -> f64 {
        self.coherence[by * self.cols + bx]
    }

    pub fn is_foreground(&self, bx: usize, by: usize) -> bool {
        self.foreground[by * self.cols + bx]
    }

    pub fn block_of(&self, x: usize, y: usize) -> (usize, usize) {
        ((x / self.block_size).min(self.cols - 1), (y / self.block_size).min(self.rows - 1))
    }

    fn pixel_index(&self, x: f64, y: f64) -> usize {
        let px = (x.floor().max(0.0) as usize).min(self.width - 1);
        let py = (y.floor().max(0.0) as usize).min(self.height - 1);
        py * self.width + px
    }

    /// Whether the pixel lies in the segmented foreground.
    pub fn pixel_foreground(&self, x: usize, y: usize) -> bool {
        self.dense_foreground[self.pixel_index(x as f64, y as f64)]
    }

    /// Orientation and coherence of the pixel containing `(x, y)`.
    pub fn at(&self, x: f64, y: f64) -> (f64, f64) {
        let i = self.pixel_index(x, y);
        (self.dense_angles[i], self.dense_coherence[i])
    }
}

/// Doubled-angle gradient-tensor orientation.
///
/// Sums run over a window twice the block size centred on each block (or
/// pixel), which smooths the field without a separate pass. Foreground is
/// decided by gray-level variance over a block-sized window. Ridge angles are in `[0, pi)`
/// with `y` pointing down; coherence is `|sum g^2 e^{2i phi}| / sum |g|^2`.
pub fn orientation_field(img: &RasterImage, block_size: usize) -> Result<OrientationField> {
    if !img.is_gray() {
        return Err(Error::invalid("orientation_field expects a single-channel image"));
    }
    if !(8..=32).contains(&block_size) {
        return Err(Error::invalid(format!("block size {block_size} outside [8, 32]")));
    }
    let (w, h) = (img.width(), img.height());
    if w < block_size || h < block_size {
        return Err(Error::invalid(format!("image {w}x{h} smaller than one {block_size}px block")));
    }
    let src = gaussian_blur(&img.to_f32(), w, h, 1.0);
    let (gx, gy) = sobel(&src, w, h);

    // Per-pixel tensor terms, summed through integral images.
    let stride = w + 1;
    let mut ixx = vec![0.0f64; stride * (h + 1)];
    let mut ixy = vec![0.0f64; stride * (h + 1)];
    let mut inn = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let (mut rxx, mut rxy, mut rnn) = (0.0, 0.0, 0.0);
        for x in 0..w {
            let a = f64::from(gx[y * w + x]);
            let b = f64::from(gy[y * w + x]);
            rxx += a * a - b * b;
            rxy += 2.0 * a * b;
            rnn += a * a + b * b;
            let i = (y + 1) * stride + x + 1;
            let up = y * stride + x + 1;
            ixx[i] = ixx[up] + rxx;
            ixy[i] = ixy[up] + rxy;
            inn[i] = inn[up] + rnn;
        }
    }
    let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
    };
    let gray = Integral::new(img.data(), w, h);

    let cols = w.div_ceil(block_size);
    let rows = h.div_ceil(block_size);
    let mut angles = vec![0.0; cols * rows];
    let mut coherence = vec![0.0; cols * rows];
    let mut foreground = vec![false; cols * rows];
    let half = block_size / 2;
    for by in 0..rows {
        for bx in 0..cols {
            let x0 = (bx * block_size).saturating_sub(half);
            let y0 = (by * block_size).saturating_sub(half);
            let x1 = ((bx + 1) * block_size + half).min(w);
            let y1 = ((by + 1) * block_size + half).min(h);
            let sxx = rect(&ixx, x0, y0, x1, y1);
            let sxy = rect(&ixy, x0, y0, x1, y1);
            let snn = rect(&inn, x0, y0, x1, y1);
            let i = by * cols + bx;
            let mag = sxx.hypot(sxy);
            if snn > 1e-9 && mag > 1e-12 * snn {
                // Gradient direction is 0.5*atan2; ridges run perpendicular.
                angles[i] = (0.5 * sxy.atan2(sxx) + PI / 2.0).rem_euclid(PI);
                coherence[i] = (mag / snn).clamp(0.0, 1.0);
            }
            let (bx0, by0) = (bx * block_size, by * block_size);
            let (bx1, by1) = ((bx0 + block_size).min(w), (by0 + block_size).min(h));
            let (s, sq) = gray.rect(bx0, by0, bx1, by1);
            let n = ((bx1 - bx0) * (by1 - by0)) as f64;
            let mean = s / n;
            foreground[i] = sq / n - mean * mean >= BACKGROUND_VARIANCE;
        }
    }
    let tensor = |x0: usize, y0: usize, x1: usize, y1: usize| -> (f64, f64) {
        let sxx = rect(&ixx, x0, y0, x1, y1);
        let sxy = rect(&ixy, x0, y0, x1, y1);
        let snn = rect(&inn, x0, y0, x1, y1);
        let mag = sxx.hypot(sxy);
        if snn > 1e-9 && mag > 1e-12 * snn {
            // Gradient direction is 0.5*atan2; ridges run perpendicular.
            let a = (0.5 * sxy.atan2(sxx) + PI / 2.0).rem_euclid(PI);
            (if a >= PI { 0.0 } else { a }, (mag / snn).clamp(0.0, 1.0))
        } else {
            (0.0, 0.0)
        }
    };
    let mut dense_angles = vec![0.0; w * h];
    let mut dense_coherence = vec![0.0; w * h];
    let mut dense_foreground = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (a, c) = tensor(x.saturating_sub(block_size), y.saturating_sub(block_size), (x + block_size).min(w), (y + block_size).min(h));
            dense_angles[i] = a;
            dense_coherence[i] = c;
            let (x0, y0) = (x.saturating_sub(half), y.saturating_sub(half));
            let (x1, y1) = ((x + half).min(w), (y + half).min(h));
            let (s, sq) = gray.rect(x0, y0, x1, y1);
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = s / n;
            dense_foreground[i] = sq / n - mean * mean >= BACKGROUND_VARIANCE;
        }
    }
    for a in angles.iter_mut() {
        if *a >= PI {
            *a = 0.0;
        }
    }
    Ok(OrientationField {
        block_size,
        width: w,
        height: h,
        cols,
        rows,
        angles,
        coherence,
        foreground,
        dense_angles,
        dense_coherence,
        dense_foreground,
    })
}
