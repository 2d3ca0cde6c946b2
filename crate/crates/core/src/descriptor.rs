//! Orientation-canonical minutia patches and gradient-histogram descriptors.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Minutia;
use crate::image::RasterImage;
use crate::scalar::Real;

/// Patch geometry used by the reference backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub side: usize,
    pub orientation_bins: usize,
    pub spatial_grid: usize,
}

impl PatchSpec {
    pub const STANDARD: PatchSpec = PatchSpec { side: 96, orientation_bins: 8, spatial_grid: 4 };

    pub fn dim(&self) -> usize {
        self.spatial_grid * self.spatial_grid * self.orientation_bins
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub const PATCH_SIDE: usize = 96;
pub const DESCRIPTOR_DIM: usize = 128;

/// Components above this value are clipped after the first normalization.
const CLAMP: f64 = 0.2;
/// Tolerance accepted when loading descriptors that should be unit length.
const UNIT_TOLERANCE: f64 = 1e-3;

/// Unit-L2 feature vector attached to a minutia.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor<T> {
    values: Vec<T>,
}

impl<T: Real> Descriptor<T> {
    /// Wraps values that are already unit length.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("descriptor has no components"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptor has non-finite components"));
        }
        let norm = values.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("descriptor norm {norm} is not 1")));
        }
        Ok(Descriptor { values })
    }

    /// Scales `values` to unit length. An all-zero vector becomes the uniform
    /// unit vector.
    pub fn normalized(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("descriptor has no components"));
        }
        Ok(Descriptor { values: normalize(values) })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn cast<U: Real>(&self) -> Descriptor<U> {
        Descriptor { values: self.values.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}

fn normalize<T: Real>(mut values: Vec<T>) -> Vec<T> {
    let norm = values.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm > T::zero() && norm.is_finite() {
        for v in &mut values {
            *v = *v / norm;
        }
    } else {
        let u = T::one() / T::of(values.len() as f64).sqrt();
        values.iter_mut().for_each(|v| *v = u);
    }
    values
}

/// Cosine similarity of two unit descriptors, clamped to [-1, 1].
pub fn cosine<T: Real>(a: &Descriptor<T>, b: &Descriptor<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("descriptor dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(dot(&a.values, &b.values))
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let s = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    s.max(-T::one()).min(T::one())
}

/// Samples a 96x96 patch centred on the minutia and rotated so that its
/// direction lies along the patch +x axis. Samples outside the image are 255.
pub fn crop_canonical_patch<T: Real>(img: &RasterImage, m: &Minutia<T>) -> Result<RasterImage> {
    if !img.is_gray() {
        return Err(Error::invalid("patch cropping expects a single-channel image"));
    }
    let (s, c) = m.theta.as_f64().sin_cos();
    let (mx, my) = (m.x.as_f64(), m.y.as_f64());
    let half = (PATCH_SIDE / 2) as f64;
    Ok(RasterImage::from_fn(PATCH_SIDE, PATCH_SIDE, |u, v| {
        let (du, dv) = (u as f64 - half, v as f64 - half);
        let x = mx + c * du - s * dv;
        let y = my + s * du + c * dv;
        img.sample_bilinear(x, y, 255.0).round().clamp(0.0, 255.0) as u8
    }))
}

/// Maps a canonical patch to a unit descriptor of fixed dimension.
pub trait DescriptorBackend<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn describe(&self, patch: &RasterImage) -> Result<Descriptor<T>>;
}

/// Reference backend: 4x4 cells of 8-bin gradient orientation histograms.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientHistogram;

impl<T: Real> DescriptorBackend<T> for GradientHistogram {
    fn name(&self) -> &'static str {
        "gradient-histogram"
    }

    fn dim(&self) -> usize {
        DESCRIPTOR_DIM
    }

    fn describe(&self, patch: &RasterImage) -> Result<Descriptor<T>> {
        compute_descriptor(patch)
    }
}

/// Gradient-orientation histogram descriptor of a 96x96 patch.
///
/// Magnitudes are weighted by a Gaussian centred on the patch and spread over
/// neighbouring cells and orientation bins by trilinear interpolation. The
/// histogram is normalized, clipped at 0.2 and normalized again.
pub fn compute_descriptor<T: Real>(patch: &RasterImage) -> Result<Descriptor<T>> {
    let spec = PatchSpec::STANDARD;
    let n = spec.side;
    if !patch.is_gray() || patch.width() != n || patch.height() != n {
        return Err(Error::invalid(format!("descriptor expects a {n}x{n} grayscale patch")));
    }
    let grid = spec.spatial_grid;
    let bins = spec.orientation_bins;
    let cell = (n / grid) as f64;
    let weights = spatial_weights();
    let px = |x: usize, y: usize| f64::from(patch.get(x, y));
    let mut hist = vec![0.0f64; spec.dim()];

    for y in 0..n {
        for x in 0..n {
            let gx = px((x + 1).min(n - 1), y) - px(x.saturating_sub(1), y);
            let gy = px(x, (y + 1).min(n - 1)) - px(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = mag * weights[y * n + x];
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);

            let cx = (x as f64 + 0.5) / cell - 0.5;
            let cy = (y as f64 + 0.5) / cell - 0.5;
            let co = angle / std::f64::consts::TAU * bins as f64;
            let (x0, y0, o0) = (cx.floor(), cy.floor(), co.floor());
            let (ax, ay, ao) = (cx - x0, cy - y0, co - o0);
            for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
                let yi = y0 as isize + dy;
                if yi < 0 || yi >= grid as isize || wy == 0.0 {
                    continue;
                }
                for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                    let xi = x0 as isize + dx;
                    if xi < 0 || xi >= grid as isize || wx == 0.0 {
                        continue;
                    }
                    for (doo, wo) in [(0, 1.0 - ao), (1, ao)] {
                        let oi = (o0 as usize + doo) % bins;
                        hist[(yi as usize * grid + xi as usize) * bins + oi] += w * wx * wy * wo;
                    }
                }
            }
        }
    }

    let mut hist = normalize(hist);
    if hist.iter().any(|&v| v > CLAMP) {
        hist.iter_mut().for_each(|v| *v = v.min(CLAMP));
        hist = normalize(hist);
    }
    Ok(Descriptor { values: hist.into_iter().map(T::of).collect() })
}

/// Gaussian window over the standard patch, sigma = half the side.
fn spatial_weights() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = PatchSpec::STANDARD.side;
        let (sigma, centre) = (n as f64 / 2.0, n as f64 / 2.0);
        (0..n * n)
            .map(|i| {
                let (fx, fy) = ((i % n) as f64 + 0.5 - centre, (i / n) as f64 + 0.5 - centre);
                (-(fx * fx + fy * fy) / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    })
}

/// Crops and describes every minutia of an image, in parallel.
pub fn describe_minutiae<T: Real>(
    img: &RasterImage,
    minutiae: &[Minutia<T>],
    backend: &dyn DescriptorBackend<T>,
) -> Result<Vec<Descriptor<T>>> {
    minutiae.par_iter().map(|m| backend.describe(&crop_canonical_patch(img, m)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::MinutiaKind;
    use std::f64::consts::PI;

    fn ridges(w: usize, h: usize) -> RasterImage {
        RasterImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let r = ((x - 70.0).powi(2) + (y - 90.0).powi(2)).sqrt();
            (128.0 + 90.0 * (r / 1.6 + 0.02 * x).sin()) as u8
        })
    }

    fn rotate_about(img: &RasterImage, cx: f64, cy: f64, alpha: f64) -> RasterImage {
        let (s, c) = alpha.sin_cos();
        RasterImage::from_fn(img.width(), img.height(), |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse rotation locates the source pixel.
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            img.sample_bilinear(sx, sy, 255.0).round() as u8
        })
    }

    fn minutia(x: f64, y: f64, theta: f64) -> Minutia<f64> {
        Minutia::new(x, y, theta, MinutiaKind::Ending, 1.0)
    }

    #[test]
    fn zero_rotation_is_raw_window() {
        let img = ridges(200, 200);
        let p = crop_canonical_patch(&img, &minutia(100.0, 100.0, 0.0)).unwrap();
        for v in 0..96 {
            for u in 0..96 {
                assert_eq!(p.get(u, v), img.get(u + 52, v + 52));
            }
        }
    }

    #[test]
    fn rotated_image_gives_same_patch() {
        let img = ridges(240, 240);
        let (cx, cy) = (120.0, 120.0);
        let base = crop_canonical_patch(&img, &minutia(cx, cy, 0.4)).unwrap();
        let rot = rotate_about(&img, cx, cy, PI / 6.0);
        let turned = crop_canonical_patch(&rot, &minutia(cx, cy, 0.4 + PI / 6.0)).unwrap();
        let mad = base.data().iter().zip(turned.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs()).sum::<f64>()
            / (96.0 * 96.0);
        assert!(mad < 4.0, "mad {mad}");
    }

    #[test]
    fn border_minutia_gets_white_band() {
        let img = RasterImage::filled(200, 200, 0);
        let p = crop_canonical_patch(&img, &minutia(10.0, 100.0, 0.0)).unwrap();
        assert_eq!(p.get(0, 48), 255);
        assert_eq!(p.get(37, 48), 255);
        assert_eq!(p.get(38, 48), 0);
    }

    #[test]
    fn constant_patch_is_uniform() {
        let d: Descriptor<f64> = compute_descriptor(&RasterImage::filled(96, 96, 77)).unwrap();
        let u = 1.0 / 128f64.sqrt();
        assert!(d.values().iter().all(|&v| (v - u).abs() < 1e-12));
    }

    #[test]
    fn brightness_shift_is_invisible() {
        let img = ridges(96, 96);
        let brighter = RasterImage::from_fn(96, 96, |x, y| img.get(x, y).saturating_add(20));
        let a: Descriptor<f64> = compute_descriptor(&img).unwrap();
        let b = compute_descriptor(&brighter).unwrap();
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert!(cosine(&a, &b).unwrap() > 0.999);
    }

    #[test]
    fn descriptor_is_unit_and_nonnegative() {
        let d: Descriptor<f32> = compute_descriptor(&ridges(96, 96)).unwrap();
        assert_eq!(d.dim(), 128);
        let n: f64 = d.values().iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn canonicalization_tracks_rotation() {
        let img = ridges(260, 260);
        let (cx, cy) = (130.0, 130.0);
        let base: Descriptor<f64> = compute_descriptor(&crop_canonical_patch(&img, &minutia(cx, cy, 1.0)).unwrap()).unwrap();
        for deg in [30.0f64, 90.0, 147.0] {
            let a = deg.to_radians();
            let rot = rotate_about(&img, cx, cy, a);
            let d = compute_descriptor(&crop_canonical_patch(&rot, &minutia(cx, cy, 1.0 + a)).unwrap()).unwrap();
            let c = cosine(&base, &d).unwrap();
            assert!(c > 0.95, "{deg}: {c}");
        }
    }

    #[test]
    fn cosine_examples() {
        let a = Descriptor::normalized(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Descriptor::normalized(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let c = Descriptor::normalized(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((cosine(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&b, &c).unwrap(), 0.0);
        let short = Descriptor::normalized(vec![1.0, 0.0]).unwrap();
        assert!(matches!(cosine(&a, &short), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn new_rejects_non_unit() {
        assert!(Descriptor::new(vec![1.0f32, 1.0]).is_err());
        assert!(Descriptor::new(vec![0.6f32, 0.8]).is_ok());
        assert!(Descriptor::<f32>::new(vec![]).is_err());
    }
}
