//! Turns a raw FTIR camera frame into a matcher-ready grayscale print.
//!
//! The capture path is: luma conversion, histogram equalization, perspective
//! rectification and resampling to the requested resolution. Rectification
//! parameters come from a printed checkerboard placed on the platen; see
//! [`calibrate_from_frames`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::gaussian_blur;
use crate::geometry::{symmetric_eigen, Homography, Point2};
use crate::image::{Ppi, RasterImage};
use crate::scalar::Real;

/// Value written where a warp samples outside the raw frame.
pub const BACKGROUND: u8 = 255;

/// BT.601 luma.
pub fn to_grayscale(img: &RasterImage) -> Result<RasterImage> {
    if img.channels() != 3 {
        return Err(Error::invalid("to_grayscale expects a 3-channel image"));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    RasterImage::gray(img.width(), img.height(), data)?.with_ppi(img.ppi())
}

/// Histogram equalization with the usual CDF remap.
///
/// A single-level image maps to all zeros.
pub fn equalize(img: &RasterImage) -> Result<RasterImage> {
    if !img.is_gray() {
        return Err(Error::invalid("equalize expects a single-channel image"));
    }
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let n = img.data().len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let mut lut = [0u8; 256];
    if cdf_min < n {
        let denom = (n - cdf_min) as f64;
        for (v, out) in lut.iter_mut().enumerate() {
            let num = cdf[v].saturating_sub(cdf_min) as f64;
            *out = (255.0 * num / denom).round().clamp(0.0, 255.0) as u8;
        }
    }
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    RasterImage::gray(img.width(), img.height(), data)?.with_ppi(img.ppi())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyEstimate<T> {
    pub homography: Homography<T>,
    /// Mean distance between mapped source points and their destinations.
    pub mean_reprojection_error: T,
    pub max_reprojection_error: T,
}

/// Least-squares DLT with Hartley normalization, mapping `src` onto `dst`.
pub fn estimate_homography<T: Real>(src: &[Point2<T>], dst: &[Point2<T>]) -> Result<HomographyEstimate<T>> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!("{} source points vs {} destination points", src.len(), dst.len())));
    }
    if src.len() < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 correspondences, got {}", src.len())));
    }
    if src.iter().chain(dst.iter()).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    if src.len() == 4 && (has_collinear_triple(src) || has_collinear_triple(dst)) {
        return Err(Error::DegenerateGeometry("three of the four points are collinear".into()));
    }
    let (ts, ns) = normalize_points(src)?;
    let (td, nd) = normalize_points(dst)?;

    let mut ata = [[T::zero(); 9]; 9];
    for (p, q) in ns.iter().zip(nd.iter()) {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let z = T::zero();
        let o = T::one();
        let r1 = [-x, -y, -o, z, z, z, u * x, u * y, u];
        let r2 = [z, z, z, -x, -y, -o, v * x, v * y, v];
        for r in [r1, r2] {
            for i in 0..9 {
                for j in i..9 {
                    ata[i][j] = ata[i][j] + r[i] * r[j];
                }
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }
    let (values, vectors) = symmetric_eigen(ata);
    if values[1].abs() <= values[8].abs() * T::of(1e-10) {
        return Err(Error::DegenerateGeometry("correspondences do not determine a unique homography".into()));
    }
    let h = vectors[0];
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];
    let td_inv = td.inverse()?;
    let full = crate::geometry::mat3_mul(&td_inv.matrix(), &crate::geometry::mat3_mul(&hn, &ts.matrix()));
    let homography = Homography::from_matrix(full)?;

    let mut sum = T::zero();
    let mut max = T::zero();
    for (p, q) in src.iter().zip(dst.iter()) {
        let e = match homography.apply(*p) {
            Some(m) => m.distance(q),
            None => T::infinity(),
        };
        sum = sum + e;
        max = max.max(e);
    }
    Ok(HomographyEstimate {
        homography,
        mean_reprojection_error: sum / T::of(src.len() as f64),
        max_reprojection_error: max,
    })
}

fn has_collinear_triple<T: Real>(pts: &[Point2<T>]) -> bool {
    let scale = pts.iter().fold(T::zero(), |m, p| m.max(p.x.abs()).max(p.y.abs())).max(T::one());
    let tol = scale * scale * T::of(1e-10);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if cross.abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Similarity moving the centroid to the origin with mean radius sqrt(2).
fn normalize_points<T: Real>(pts: &[Point2<T>]) -> Result<(Homography<T>, Vec<Point2<T>>)> {
    let n = T::of(pts.len() as f64);
    let cx = pts.iter().map(|p| p.x).sum::<T>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<T>() / n;
    let mean_r = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<T>() / n;
    if !(mean_r > T::zero()) {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let s = T::SQRT_2() / mean_r;
    let z = T::zero();
    let t = Homography::from_matrix([[s, z, -s * cx], [z, s, -s * cy], [z, z, T::one()]])?;
    let out = pts.iter().map(|p| Point2::new((p.x - cx) * s, (p.y - cy) * s)).collect();
    Ok((t, out))
}

/// Axis-aligned crop in rectified coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Persisted rectification parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    /// Maps raw frame pixels to rectified pixels.
    pub homography: Homography<f64>,
    pub native_ppi_x: f64,
    pub native_ppi_y: f64,
    pub crop_rect: CropRect,
}

pub const MIN_NATIVE_PPI: f64 = 500.0;
pub const MAX_NATIVE_PPI: f64 = 5000.0;

impl CalibrationProfile {
    pub fn validate(&self) -> Result<()> {
        for (axis, v) in [("x", self.native_ppi_x), ("y", self.native_ppi_y)] {
            if !(MIN_NATIVE_PPI..=MAX_NATIVE_PPI).contains(&v) {
                return Err(Error::invalid(format!(
                    "native ppi {axis} = {v} outside [{MIN_NATIVE_PPI}, {MAX_NATIVE_PPI}]"
                )));
            }
        }
        let c = &self.crop_rect;
        if !(c.x >= 0.0 && c.y >= 0.0 && c.width >= 1.0 && c.height >= 1.0)
            || ![c.x, c.y, c.width, c.height].iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid(format!("invalid crop rectangle {c:?}")));
        }
        Ok(())
    }

    /// Checks that the crop lies inside the rectified footprint of a raw frame.
    pub fn validate_for_frame(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        let corners = [(0.0, 0.0), (width as f64, 0.0), (0.0, height as f64), (width as f64, height as f64)];
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in corners {
            let p = self
                .homography
                .apply(Point2::new(x, y))
                .ok_or_else(|| Error::DegenerateGeometry("frame corner maps to infinity".into()))?;
            lo = (lo.0.min(p.x), lo.1.min(p.y));
            hi = (hi.0.max(p.x), hi.1.max(p.y));
        }
        let c = &self.crop_rect;
        let tol = 1e-6;
        if c.x < lo.0 - tol || c.y < lo.1 - tol || c.x + c.width > hi.0 + tol || c.y + c.height > hi.1 + tol {
            return Err(Error::invalid(format!(
                "crop {c:?} exceeds rectified bounds [{:.1}, {:.1}] x [{:.1}, {:.1}]",
                lo.0, hi.0, lo.1, hi.1
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let profile: CalibrationProfile = serde_json::from_str(&text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Output resolutions supported by the capture path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum TargetPpi {
    Adult,
    Neonate,
}

impl TargetPpi {
    pub fn value(self) -> f64 {
        match self {
            TargetPpi::Adult => 500.0,
            TargetPpi::Neonate => 1900.0,
        }
    }
}

impl TryFrom<u32> for TargetPpi {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            500 => Ok(TargetPpi::Adult),
            1900 => Ok(TargetPpi::Neonate),
            other => Err(Error::invalid(format!("target ppi must be 500 or 1900, got {other}"))),
        }
    }
}

impl From<TargetPpi> for u32 {
    fn from(t: TargetPpi) -> u32 {
        t.value() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub image: RasterImage,
    /// Set when the target resolution exceeds the native one on some axis.
    pub upsampled: bool,
}

/// Warps through the profile homography, crops, and resamples to `target`.
///
/// Sampling is inverse-mapped bilinear; when shrinking, each output pixel
/// averages a `k x k` grid of bilinear samples, `k = ceil(shrink factor)`.
pub fn rectify_and_scale(img: &RasterImage, profile: &CalibrationProfile, target: TargetPpi) -> Result<Rectified> {
    if !img.is_gray() {
        return Err(Error::invalid("rectify_and_scale expects a single-channel image"));
    }
    profile.validate_for_frame(img.width(), img.height())?;
    let inv = profile.homography.inverse()?;
    let t = target.value();
    let sx = profile.native_ppi_x / t;
    let sy = profile.native_ppi_y / t;
    let crop = profile.crop_rect;
    let out_w = ((crop.width / sx).round() as usize).max(1);
    let out_h = ((crop.height / sy).round() as usize).max(1);
    let kx = sx.ceil().max(1.0) as usize;
    let ky = sy.ceil().max(1.0) as usize;

    let mut data = vec![0u8; out_w * out_h];
    let fill = f64::from(BACKGROUND);
    for v in 0..out_h {
        for u in 0..out_w {
            let mut acc = 0.0;
            for j in 0..ky {
                let oy = if ky == 1 { 0.0 } else { (j as f64 + 0.5) / ky as f64 - 0.5 };
                let ry = crop.y + (v as f64 + oy) * sy;
                for i in 0..kx {
                    let ox = if kx == 1 { 0.0 } else { (i as f64 + 0.5) / kx as f64 - 0.5 };
                    let rx = crop.x + (u as f64 + ox) * sx;
                    acc += match inv.apply(Point2::new(rx, ry)) {
                        Some(p) => img.sample_bilinear(p.x, p.y, fill),
                        None => fill,
                    };
                }
            }
            data[v * out_w + u] = (acc / (kx * ky) as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    let image = RasterImage::gray(out_w, out_h, data)?.with_ppi(Some(Ppi::uniform(t)))?;
    let upsampled = t > profile.native_ppi_x.min(profile.native_ppi_y);
    Ok(Rectified { image, upsampled })
}

/// Full capture path: luma (for color frames), equalization, rectification.
pub fn calibrate_capture(raw: &RasterImage, profile: &CalibrationProfile, target: TargetPpi) -> Result<Rectified> {
    let gray = if raw.is_gray() { raw.clone() } else { to_grayscale(raw)? };
    let eq = equalize(&gray)?;
    rectify_and_scale(&eq, profile, target)
}

/// Detects the `rows x cols` inner corners of a checkerboard.
///
/// Candidates are maxima of the Hessian saddle response
/// `Ixy^2 - Ixx*Iyy` on a smoothed copy, kept only when a ring around them
/// shows four alternating dark/bright sectors. Each survivor is refined to
/// the saddle point of a local quadratic fit. Corners come back in row-major
/// board order starting at the top-left outer corner.
pub fn find_checkerboard_corners(img: &RasterImage, rows: usize, cols: usize) -> Result<Vec<Point2<f64>>> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid("board needs at least 2x2 inner corners"));
    }
    let gray = if img.is_gray() { img.clone() } else { to_grayscale(img)? };
    let (w, h) = (gray.width(), gray.height());
    let expected = rows * cols;
    let src = gray.to_f32();
    let smooth = gaussian_blur(&src, w, h, 2.0);

    let at = |x: usize, y: usize| smooth[y * w + x];
    let mut response = vec![0.0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let ixx = at(x + 1, y) - 2.0 * at(x, y) + at(x - 1, y);
            let iyy = at(x, y + 1) - 2.0 * at(x, y) + at(x, y - 1);
            let ixy = (at(x + 1, y + 1) - at(x + 1, y - 1) - at(x - 1, y + 1) + at(x - 1, y - 1)) / 4.0;
            response[y * w + x] = (ixy * ixy - ixx * iyy).max(0.0);
        }
    }
    let peak = response.iter().copied().fold(0.0f32, f32::max);
    if peak <= 0.0 {
        return Err(Error::DetectionFailure { expected, found: 0 });
    }

    const NMS: usize = 4;
    const RING: f64 = 5.0;
    let margin = (RING.ceil() as usize + 2).max(NMS);
    let mut candidates: Vec<(f32, Point2<f64>)> = Vec::new();
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let r = response[y * w + x];
            if r < 0.05 * peak {
                continue;
            }
            let mut is_max = true;
            'scan: for yy in y - NMS..=y + NMS {
                for xx in x - NMS..=x + NMS {
                    let o = response[yy * w + xx];
                    if o > r || (o == r && (yy, xx) < (y, x)) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if !is_max || !is_saddle_ring(&gray, x as f64, y as f64, RING) {
                continue;
            }
            if let Some(p) = refine_saddle(&smooth, w, h, x as f64, y as f64) {
                candidates.push((r, p));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut corners: Vec<Point2<f64>> = Vec::new();
    for (_, p) in candidates {
        if corners.iter().all(|c| c.distance(&p) > 3.0) {
            corners.push(p);
        }
    }
    if corners.len() != expected {
        return Err(Error::DetectionFailure { expected, found: corners.len() });
    }
    order_board(&corners, rows, cols)
}

fn is_saddle_ring(img: &RasterImage, cx: f64, cy: f64, radius: f64) -> bool {
    const SAMPLES: usize = 32;
    let vals: Vec<f64> = (0..SAMPLES)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / SAMPLES as f64;
            img.sample_bilinear(cx + radius * a.cos(), cy + radius * a.sin(), f64::from(BACKGROUND))
        })
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 30.0 {
        return false;
    }
    let mid = 0.5 * (lo + hi);
    let signs: Vec<bool> = vals.iter().map(|&v| v > mid).collect();
    let changes = (0..SAMPLES).filter(|&k| signs[k] != signs[(k + 1) % SAMPLES]).count();
    changes == 4
}

/// Newton steps on a quadratic surface fitted over a 7x7 window.
fn refine_saddle(smooth: &[f32], w: usize, h: usize, x0: f64, y0: f64) -> Option<Point2<f64>> {
    const R: isize = 3;
    let sample = |x: f64, y: f64| -> f64 {
        let xf = x.floor();
        let yf = y.floor();
        let (xi, yi) = (xf as isize, yf as isize);
        if xi < 0 || yi < 0 || xi + 1 >= w as isize || yi + 1 >= h as isize {
            return f64::NAN;
        }
        let (fx, fy) = (x - xf, y - yf);
        let p = |xx: isize, yy: isize| f64::from(smooth[yy as usize * w + xx as usize]);
        let top = p(xi, yi) * (1.0 - fx) + p(xi + 1, yi) * fx;
        let bot = p(xi, yi + 1) * (1.0 - fx) + p(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bot * fy
    };
    let (mut cx, mut cy) = (x0, y0);
    for _ in 0..6 {
        // Fit f = a x^2 + b xy + c y^2 + d x + e y + g by least squares.
        let mut ata = [[0.0f64; 6]; 6];
        let mut atb = [0.0f64; 6];
        for dy in -R..=R {
            for dx in -R..=R {
                let (x, y) = (dx as f64, dy as f64);
                let f = sample(cx + x, cy + y);
                if !f.is_finite() {
                    return None;
                }
                let row = [x * x, x * y, y * y, x, y, 1.0];
                for i in 0..6 {
                    atb[i] += row[i] * f;
                    for j in 0..6 {
                        ata[i][j] += row[i] * row[j];
                    }
                }
            }
        }
        let coef = solve6(ata, atb)?;
        let (a, b, c, d, e) = (coef[0], coef[1], coef[2], coef[3], coef[4]);
        let det = 4.0 * a * c - b * b;
        if det >= 0.0 {
            return None;
        }
        let sx = (-2.0 * c * d + b * e) / det;
        let sy = (-2.0 * a * e + b * d) / det;
        if sx.abs() > 2.0 || sy.abs() > 2.0 {
            return None;
        }
        cx += sx;
        cy += sy;
        if sx.abs() < 1e-4 && sy.abs() < 1e-4 {
            break;
        }
    }
    if (cx - x0).abs() > 3.0 || (cy - y0).abs() > 3.0 {
        return None;
    }
    Some(Point2::new(cx, cy))
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..6 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..6 {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some(std::array::from_fn(|i| b[i] / a[i][i]))
}

/// Orders detected corners row-major using the four outer board corners.
fn order_board(points: &[Point2<f64>], rows: usize, cols: usize) -> Result<Vec<Point2<f64>>> {
    let fail = || Error::DetectionFailure { expected: rows * cols, found: points.len() };
    let hull = convex_hull(points);
    if hull.len() < 4 {
        return Err(fail());
    }
    // Largest-area quadrilateral on the hull is the board outline.
    let mut best = (f64::NEG_INFINITY, [0usize; 4]);
    let n = hull.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                for d in (c + 1)..n {
                    let q = [hull[a], hull[b], hull[c], hull[d]];
                    let area = polygon_area(&q);
                    if area > best.0 {
                        best = (area, [a, b, c, d]);
                    }
                }
            }
        }
    }
    let mut quad: Vec<Point2<f64>> = best.1.iter().map(|&i| hull[i]).collect();
    let cx = quad.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = quad.iter().map(|p| p.y).sum::<f64>() / 4.0;
    // Ascending atan2 with y pointing down runs clockwise on screen.
    quad.sort_by(|p, q| (p.y - cy).atan2(p.x - cx).total_cmp(&(q.y - cy).atan2(q.x - cx)));
    let start = (0..4).min_by(|&i, &j| (quad[i].x + quad[i].y).total_cmp(&(quad[j].x + quad[j].y))).unwrap_or(0);
    quad.rotate_left(start);

    let mut layouts = vec![(cols, rows, false)];
    if rows != cols {
        layouts.push((rows, cols, true));
    }
    let mut best_assign: Option<(f64, Vec<Point2<f64>>)> = None;
    for (nx, ny, transposed) in layouts {
        let ideal = [
            Point2::new(0.0, 0.0),
            Point2::new((nx - 1) as f64, 0.0),
            Point2::new((nx - 1) as f64, (ny - 1) as f64),
            Point2::new(0.0, (ny - 1) as f64),
        ];
        let Ok(est) = estimate_homography(&ideal, &quad) else { continue };
        let h = est.homography;
        let mut slots: Vec<Option<Point2<f64>>> = vec![None; rows * cols];
        let mut worst = 0.0f64;
        let mut ok = true;
        for gy in 0..ny {
            for gx in 0..nx {
                let Some(pred) = h.apply(Point2::new(gx as f64, gy as f64)) else {
                    ok = false;
                    continue;
                };
                let (d, p) = points
                    .iter()
                    .map(|p| (p.distance(&pred), *p))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .ok_or_else(fail)?;
                let spacing = [(1.0, 0.0), (0.0, 1.0)]
                    .iter()
                    .filter_map(|(ox, oy)| h.apply(Point2::new(gx as f64 + ox, gy as f64 + oy)))
                    .map(|q| q.distance(&pred))
                    .fold(f64::INFINITY, f64::min);
                if d > 0.3 * spacing {
                    ok = false;
                }
                worst = worst.max(d);
                let (r, c) = if transposed { (gx, gy) } else { (gy, gx) };
                slots[r * cols + c] = Some(p);
            }
        }
        if !ok {
            continue;
        }
        let assigned: Vec<Point2<f64>> = slots.into_iter().flatten().collect();
        let distinct = assigned.iter().enumerate().all(|(i, p)| assigned[..i].iter().all(|q| q != p));
        if assigned.len() == rows * cols && distinct && best_assign.as_ref().is_none_or(|b| worst < b.0) {
            best_assign = Some((worst, assigned));
        }
    }
    best_assign.map(|(_, v)| v).ok_or_else(fail)
}

fn polygon_area(q: &[Point2<f64>]) -> f64 {
    // Area of the convex hull of the four points, order-independent.
    let hull = convex_hull(q);
    let n = hull.len();
    (0..n).map(|i| hull[i].x * hull[(i + 1) % n].y - hull[(i + 1) % n].x * hull[i].y).sum::<f64>().abs() / 2.0
}

fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Estimates a profile from one or more frames of a checkerboard with
/// `rows x cols` inner corners and `square_mm` squares.
///
/// Native ppi per axis comes from the mean corner spacing in the raw frame.
/// The rectified plane keeps that spacing, so it carries the native
/// resolution; the crop covers the board plus one square of margin.
pub fn calibrate_from_frames(
    frames: &[RasterImage],
    rows: usize,
    cols: usize,
    square_mm: f64,
) -> Result<CalibrationProfile> {
    if frames.is_empty() {
        return Err(Error::InsufficientData("no calibration frames".into()));
    }
    if !(square_mm > 0.0) {
        return Err(Error::invalid("square size must be positive"));
    }
    let mut detections = Vec::with_capacity(frames.len());
    for f in frames {
        detections.push(find_checkerboard_corners(f, rows, cols)?);
    }
    let (mut sum_x, mut n_x, mut sum_y, mut n_y) = (0.0, 0usize, 0.0, 0usize);
    for pts in &detections {
        for r in 0..rows {
            for c in 0..cols {
                let p = pts[r * cols + c];
                if c + 1 < cols {
                    sum_x += p.distance(&pts[r * cols + c + 1]);
                    n_x += 1;
                }
                if r + 1 < rows {
                    sum_y += p.distance(&pts[(r + 1) * cols + c]);
                    n_y += 1;
                }
            }
        }
    }
    let step_x = sum_x / n_x as f64;
    let step_y = sum_y / n_y as f64;
    let inches = square_mm / 25.4;
    let (ppi_x, ppi_y) = (step_x / inches, step_y / inches);

    let mut src = Vec::new();
    let mut dst = Vec::new();
    for pts in &detections {
        for r in 0..rows {
            for c in 0..cols {
                src.push(pts[r * cols + c]);
                dst.push(Point2::new((c + 1) as f64 * step_x, (r + 1) as f64 * step_y));
            }
        }
    }
    let est = estimate_homography(&src, &dst)?;
    let profile = CalibrationProfile {
        homography: est.homography,
        native_ppi_x: ppi_x,
        native_ppi_y: ppi_y,
        crop_rect: CropRect { x: 0.0, y: 0.0, width: (cols + 1) as f64 * step_x, height: (rows + 1) as f64 * step_y },
    };
    profile.validate()?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_examples() {
        let img = RasterImage::rgb(3, 1, vec![255, 255, 255, 255, 0, 0, 0, 0, 0]).unwrap();
        let g = to_grayscale(&img).unwrap();
        assert_eq!(g.data(), &[255, 76, 0]);
        for v in 0..=255u8 {
            let img = RasterImage::rgb(1, 1, vec![v, v, v]).unwrap();
            assert_eq!(to_grayscale(&img).unwrap().data(), &[v]);
        }
        assert!(to_grayscale(&RasterImage::filled(2, 2, 0)).is_err());
    }

    #[test]
    fn equalize_examples() {
        let c = equalize(&RasterImage::filled(3, 3, 7)).unwrap();
        assert!(c.data().iter().all(|&v| v == 0));
        let two = equalize(&RasterImage::gray(2, 1, vec![0, 255]).unwrap()).unwrap();
        assert_eq!(two.data(), &[0, 255]);
        // cdf = [2, 4], cdf_min = 2, N = 4: 10 -> 0, 20 -> 255.
        let four = equalize(&RasterImage::gray(4, 1, vec![10, 10, 20, 20]).unwrap()).unwrap();
        assert_eq!(four.data(), &[0, 0, 255, 255]);
    }

    #[test]
    fn homography_needs_four_points() {
        let p = vec![Point2::new(0.0, 0.0); 3];
        assert!(matches!(estimate_homography(&p, &p), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p: Vec<Point2<f64>> = (0..6).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(estimate_homography(&p, &p), Err(Error::DegenerateGeometry(_))));
        let q = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 1.0)];
        assert!(matches!(estimate_homography(&q, &q), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn identity_and_translation() {
        let src: Vec<Point2<f64>> = vec![
            Point2::new(0.0, 0.0),
            Point2::new(100.0, 0.0),
            Point2::new(100.0, 80.0),
            Point2::new(0.0, 80.0),
        ];
        let id = estimate_homography(&src, &src).unwrap().homography.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((id[i][j] - e).abs() < 1e-9);
            }
        }
        let dst: Vec<_> = src.iter().map(|p| Point2::new(p.x + 5.0, p.y + 3.0)).collect();
        let m = estimate_homography(&src, &dst).unwrap().homography.matrix();
        assert!((m[0][2] - 5.0).abs() < 1e-6 && (m[1][2] - 3.0).abs() < 1e-6);
        for (i, j) in [(0, 1), (1, 0), (2, 0), (2, 1)] {
            assert!(m[i][j].abs() < 1e-6);
        }
    }

    #[test]
    fn target_ppi_values() {
        assert_eq!(TargetPpi::try_from(500).unwrap(), TargetPpi::Adult);
        assert_eq!(TargetPpi::try_from(1900).unwrap(), TargetPpi::Neonate);
        assert!(TargetPpi::try_from(1000).is_err());
    }

    fn identity_profile(ppi: f64, crop: CropRect) -> CalibrationProfile {
        CalibrationProfile { homography: Homography::identity(), native_ppi_x: ppi, native_ppi_y: ppi, crop_rect: crop }
    }

    #[test]
    fn pure_downscale() {
        let img = RasterImage::from_fn(420, 410, |x, y| ((x / 8 + y / 8) % 2 * 200) as u8);
        let p = identity_profile(2000.0, CropRect { x: 10.0, y: 5.0, width: 400.0, height: 400.0 });
        let out = rectify_and_scale(&img, &p, TargetPpi::Adult).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (100, 100));
        assert_eq!(out.image.ppi(), Some(Ppi::uniform(500.0)));
        assert!(!out.upsampled);
        assert!(!rectify_and_scale(&img, &p, TargetPpi::Neonate).unwrap().upsampled);
        let coarse = identity_profile(1000.0, p.crop_rect);
        assert!(rectify_and_scale(&img, &coarse, TargetPpi::Neonate).unwrap().upsampled);
    }

    #[test]
    fn unit_scale_identity_reproduces_crop() {
        let img = RasterImage::from_fn(60, 50, |x, y| ((x * 31 + y * 17) % 256) as u8);
        let p = identity_profile(500.0, CropRect { x: 7.0, y: 3.0, width: 40.0, height: 30.0 });
        let out = rectify_and_scale(&img, &p, TargetPpi::Adult).unwrap().image;
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!(out.get(x, y), img.get(x + 7, y + 3));
            }
        }
    }

    #[test]
    fn crop_outside_frame_is_rejected() {
        let img = RasterImage::filled(50, 50, 0);
        let p = identity_profile(500.0, CropRect { x: 20.0, y: 0.0, width: 40.0, height: 10.0 });
        assert!(rectify_and_scale(&img, &p, TargetPpi::Adult).is_err());
        let bad = identity_profile(400.0, CropRect { x: 0.0, y: 0.0, width: 10.0, height: 10.0 });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blank_image_has_no_corners() {
        let err = find_checkerboard_corners(&RasterImage::filled(120, 120, 200), 7, 7).unwrap_err();
        assert!(matches!(err, Error::DetectionFailure { expected: 49, found: 0 }));
    }

    #[test]
    fn profile_json_round_trip() {
        let p = identity_profile(1917.0, CropRect { x: 1.0, y: 2.0, width: 3.0, height: 4.0 });
        let text = serde_json::to_string(&p).unwrap();
        let back: CalibrationProfile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
