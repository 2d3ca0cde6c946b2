//! Small dense-buffer filters shared by calibration and extraction.

/// Separable Gaussian blur with clamped borders.
pub(crate) fn gaussian_blur(src: &[f32], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();

    let (w, h) = (width as isize, height as isize);
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        let row = &src[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                acc += kv * row[xx as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Sobel gradients with clamped borders.
pub(crate) fn sobel(src: &[f32], width: usize, height: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; src.len()];
    let mut gy = vec![0.0f32; src.len()];
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, width as isize - 1) as usize;
        let yy = y.clamp(0, height as isize - 1) as usize;
        src[yy * width + xx]
    };
    for y in 0..height as isize {
        for x in 0..width as isize {
            let i = y as usize * width + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Summed-area table with a zero guard row and column.
pub(crate) struct Integral {
    width: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(src: &[u8], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sum = vec![0.0f64; stride * (height + 1)];
        let mut sq = vec![0.0f64; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for x in 0..width {
                let v = f64::from(src[y * width + x]);
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { width, sum, sq }
    }

    /// Sum and sum of squares over `[x0, x1) x [y0, y1)`.
    #[inline]
    pub(crate) fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (f64, f64) {
        let s = self.width + 1;
        let a = |t: &[f64]| t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0];
        (a(&self.sum), a(&self.sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constant() {
        let src = vec![42.0f32; 20 * 10];
        let out = gaussian_blur(&src, 20, 10, 2.0);
        assert!(out.iter().all(|v| (v - 42.0).abs() < 1e-4));
    }

    #[test]
    fn integral_matches_direct_sum() {
        let data: Vec<u8> = (0..35).map(|i| (i * 7 % 251) as u8).collect();
        let it = Integral::new(&data, 7, 5);
        let (s, q) = it.rect(2, 1, 6, 4);
        let mut es = 0.0;
        let mut eq = 0.0;
        for y in 1..4 {
            for x in 2..6 {
                let v = f64::from(data[y * 7 + x]);
                es += v;
                eq += v * v;
            }
        }
        assert_eq!((s, q), (es, eq));
    }

    #[test]
    fn sobel_on_ramp() {
        let src: Vec<f32> = (0..25).map(|i| (i % 5) as f32).collect();
        let (gx, gy) = sobel(&src, 5, 5);
        assert_eq!(gx[12], 8.0);
        assert_eq!(gy[12], 0.0);
    }
}
