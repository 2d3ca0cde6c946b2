//! Deterministic synthetic fingerprints with ground-truth minutiae.
//!
//! Ridges are the level sets of a phase field: a smooth pattern-class phase
//! plus one spiral term `s * atan2(y - yn, x - xn)` per minutia. Each spiral
//! adds exactly one fringe on one side of its centre, which is what creates
//! the ending or bifurcation there. The local phase at the centre decides
//! which of the two kinds appears, so centres are nudged along the phase
//! gradient until it matches the requested kind.
//!
//! Randomness comes from ChaCha8 seeded with the 64-bit spec seed.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::descriptor::{describe_minutiae, GradientHistogram};
use crate::error::{Error, Result};
use crate::extract::{Minutia, MinutiaKind};
use crate::geometry::{wrap_pi, Homography, Point2};
use crate::image::{Ppi, RasterImage};
use crate::scalar::Real;
use crate::spoofdet::SkinModel;
use crate::template::Template;

pub const MAX_MINUTIAE: usize = 64;
/// Minimum distance of a minutia from the foreground boundary.
pub const FOREGROUND_INSET: f64 = 40.0;
const CORE_CLEARANCE: f64 = 40.0;
const MIN_SEPARATION: f64 = 24.0;
const FADE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Singularity {
    Arch,
    Loop,
    Whorl,
}

impl Singularity {
    pub const ALL: [Singularity; 3] = [Singularity::Arch, Singularity::Loop, Singularity::Whorl];
}

impl std::str::FromStr for Singularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch" => Ok(Singularity::Arch),
            "loop" => Ok(Singularity::Loop),
            "whorl" => Ok(Singularity::Whorl),
            _ => Err(Error::invalid(format!("unknown pattern type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Ridge frequency in cycles per pixel.
    pub ridge_freq: f64,
    pub minutiae_count: usize,
    pub singularity: Singularity,
}

impl SynthSpec {
    /// 400x400 loop with 30 minutiae at 0.11 cycles/px.
    pub fn new(seed: u64) -> Self {
        SynthSpec { seed, width: 400, height: 400, ridge_freq: 0.11, minutiae_count: 30, singularity: Singularity::Loop }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minutiae_count > MAX_MINUTIAE {
            return Err(Error::invalid(format!("at most {MAX_MINUTIAE} minutiae")));
        }
        if !(0.05..=0.25).contains(&self.ridge_freq) {
            return Err(Error::invalid("ridge frequency outside [0.05, 0.25]"));
        }
        if self.width < 160 || self.height < 160 {
            return Err(Error::invalid("synthetic images must be at least 160x160"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub minutiae: Vec<Minutia<f64>>,
}

/// Placement of the finger in the frame for one capture: rotation about the
/// image centre, then translation, plus additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Impression {
    pub fn identity() -> Self {
        Impression { rotation: 0.0, dx: 0.0, dy: 0.0, noise_sigma: 0.0, seed: 0 }
    }

    /// Random rotation within +-`max_rotation` and translation within
    /// +-`max_shift`, drawn from `seed`.
    pub fn random(seed: u64, max_rotation: f64, max_shift: f64, noise_sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1397);
        Impression {
            rotation: rng.random_range(-max_rotation..=max_rotation),
            dx: rng.random_range(-max_shift..=max_shift),
            dy: rng.random_range(-max_shift..=max_shift),
            noise_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Spiral {
    x: f64,
    y: f64,
    sign: f64,
}

/// Phase field of one synthetic finger in its own (unmoved) frame.
#[derive(Debug, Clone)]
struct Finger {
    singularity: Singularity,
    core: (f64, f64),
    rot: (f64, f64),
    arch: (f64, f64),
    segment: f64,
    offset: f64,
    freq: f64,
    spirals: Vec<Spiral>,
    ellipse: (f64, f64, f64, f64),
}

impl Finger {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.core.0, y - self.core.1);
        let (s, c) = self.rot;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Distance-like function whose level sets are the unperturbed ridges.
    fn pattern(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        match self.singularity {
            Singularity::Arch => {
                let (amp, width) = self.arch;
                v + amp * (-(u * u) / (2.0 * width * width)).exp()
            }
            Singularity::Loop => {
                if v >= 0.0 {
                    u.abs()
                } else {
                    u.hypot(v)
                }
            }
            Singularity::Whorl => {
                let half = self.segment / 2.0;
                let du = (u.abs() - half).max(0.0);
                du.hypot(v)
            }
        }
    }

    fn phase_without(&self, x: f64, y: f64, skip: Option<usize>) -> f64 {
        let mut phi = TAU * self.freq * self.pattern(x, y) + self.offset;
        for (k, s) in self.spirals.iter().enumerate() {
            if Some(k) != skip {
                phi += s.sign * (y - s.y).atan2(x - s.x);
            }
        }
        phi
    }

    fn gradient_without(&self, x: f64, y: f64, skip: usize) -> (f64, f64) {
        const H: f64 = 0.25;
        let d = |ax: f64, ay: f64, bx: f64, by: f64| {
            wrap_pi(self.phase_without(ax, ay, Some(skip)) - self.phase_without(bx, by, Some(skip)))
        };
        (d(x + H, y, x - H, y) / (2.0 * H), d(x, y + H, x, y - H) / (2.0 * H))
    }

    /// Signed distance to the foreground ellipse boundary, positive inside.
    fn inset(&self, x: f64, y: f64) -> f64 {
        let (cx, cy, a, b) = self.ellipse;
        let e = (((x - cx) / a).powi(2) + ((y - cy) / b).powi(2)).sqrt();
        (1.0 - e) * a.min(b)
    }

    /// Direction the added fringe of spiral `k` takes, and the kind that the
    /// current local phase produces.
    fn minutia_at(&self, k: usize) -> (f64, MinutiaKind) {
        let s = self.spirals[k];
        let (gx, gy) = self.gradient_without(s.x, s.y, k);
        let dir = (s.sign * -gx).atan2(s.sign * gy);
        let local = self.phase_without(s.x, s.y, Some(k)) + s.sign * dir;
        let kind = if wrap_pi(local).abs() < PI / 2.0 { MinutiaKind::Ending } else { MinutiaKind::Bifurcation };
        (dir, kind)
    }

    /// `cos` of the full phase. The spiral terms are accumulated as a
    /// product of complex numbers, which avoids one `atan2` per spiral.
    fn cos_phase(&self, x: f64, y: f64) -> f64 {
        let (mut re, mut im) = (TAU * self.freq * self.pattern(x, y) + self.offset).sin_cos();
        (re, im) = (im, re);
        for s in &self.spirals {
            let (dx, dy) = (x - s.x, s.sign * (y - s.y));
            (re, im) = (re * dx - im * dy, re * dy + im * dx);
        }
        let norm = re.hypot(im);
        if norm > 1e-200 && norm.is_finite() {
            re / norm
        } else {
            self.phase_without(x, y, None).cos()
        }
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let fade = (self.inset(x, y) / FADE).clamp(0.0, 1.0);
        if fade == 0.0 {
            return 255.0;
        }
        255.0 - fade * (40.0 + 170.0 * (0.5 + 0.5 * self.cos_phase(x, y)))
    }
}

fn build_finger(spec: &SynthSpec) -> Result<Finger> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let ellipse = (
        w / 2.0 + rng.random_range(-0.02..=0.02) * w,
        h / 2.0 + rng.random_range(-0.02..=0.02) * h,
        w * rng.random_range(0.40..=0.44),
        h * rng.random_range(0.44..=0.47),
    );
    let core = (ellipse.0 + rng.random_range(-0.06..=0.06) * w, ellipse.1 + rng.random_range(-0.12..=0.0) * h);
    let angle: f64 = rng.random_range(-0.26..=0.26);
    let mut finger = Finger {
        singularity: spec.singularity,
        core,
        rot: angle.sin_cos(),
        arch: (rng.random_range(20.0..=40.0), rng.random_range(60.0..=90.0)),
        segment: rng.random_range(8.0..=30.0),
        offset: match spec.singularity {
            Singularity::Arch => rng.random_range(0.0..TAU),
            _ => PI,
        },
        freq: spec.ridge_freq,
        spirals: Vec::new(),
        ellipse,
    };

    let mut kinds = Vec::with_capacity(spec.minutiae_count);
    let mut attempts = 0;
    while finger.spirals.len() < spec.minutiae_count {
        attempts += 1;
        if attempts > 20_000 {
            return Err(Error::invalid("image too small for the requested minutiae"));
        }
        let x = rng.random_range(0.0..w);
        let y = rng.random_range(0.0..h);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let kind = if rng.random_bool(0.5) { MinutiaKind::Ending } else { MinutiaKind::Bifurcation };
        if !placeable(&finger, x, y) {
            continue;
        }
        finger.spirals.push(Spiral { x, y, sign });
        kinds.push(kind);
    }

    // Nudge each centre along the phase gradient until its local phase
    // yields the requested kind. Other spirals shift slightly in response, so
    // a few sweeps are needed.
    for _ in 0..8 {
        for k in 0..finger.spirals.len() {
            let s = finger.spirals[k];
            let (gx, gy) = finger.gradient_without(s.x, s.y, k);
            let norm2 = gx * gx + gy * gy;
            if norm2 < 1e-12 {
                continue;
            }
            let dir = (s.sign * -gx).atan2(s.sign * gy);
            let target = if kinds[k] == MinutiaKind::Ending { 0.0 } else { PI };
            let local = finger.phase_without(s.x, s.y, Some(k)) + s.sign * dir;
            let delta = wrap_pi(target - local);
            let (nx, ny) = (s.x + delta * gx / norm2, s.y + delta * gy / norm2);
            if placeable_except(&finger, nx, ny, k) {
                finger.spirals[k].x = nx;
                finger.spirals[k].y = ny;
            }
        }
    }
    Ok(finger)
}

fn placeable(f: &Finger, x: f64, y: f64) -> bool {
    placeable_except(f, x, y, usize::MAX)
}

fn placeable_except(f: &Finger, x: f64, y: f64, skip: usize) -> bool {
    if f.inset(x, y) < FOREGROUND_INSET {
        return false;
    }
    let (u, v) = f.local(x, y);
    let core_dist = match f.singularity {
        Singularity::Whorl => (u.abs() - f.segment / 2.0).max(0.0).hypot(v),
        _ => u.hypot(v),
    };
    if core_dist < CORE_CLEARANCE {
        return false;
    }
    // The loop pattern folds along the ray below the core.
    if f.singularity == Singularity::Loop && v > 0.0 && u.abs() < 14.0 {
        return false;
    }
    f.spirals
        .iter()
        .enumerate()
        .all(|(k, s)| k == skip || (s.x - x).hypot(s.y - y) >= MIN_SEPARATION)
}

/// Renders the spec in its reference placement, without noise.
pub fn generate(spec: &SynthSpec) -> Result<(RasterImage, GroundTruth)> {
    generate_impression(spec, &Impression::identity())
}

/// Renders one capture of the spec's finger under `imp`.
///
/// Ground truth is moved with the finger; minutiae that end up closer than
/// [`FOREGROUND_INSET`] / 2 to the frame edge are dropped.
pub fn generate_impression(spec: &SynthSpec, imp: &Impression) -> Result<(RasterImage, GroundTruth)> {
    let finger = build_finger(spec)?;
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (s, c) = imp.rotation.sin_cos();
    let forward = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy + imp.dx, cy + s * dx + c * dy + imp.dy)
    };
    let backward = |x: f64, y: f64| {
        let (dx, dy) = (x - cx - imp.dx, y - cy - imp.dy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    };

    let noise = Normal::new(0.0, imp.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ imp.seed.rotate_left(17) ^ 0x0a11_ce55);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = backward(x as f64, y as f64);
            let mut v = finger.intensity(fx, fy);
            if imp.noise_sigma > 0.0 && v < 255.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let img = RasterImage::gray(w, h, data)?.with_ppi(Some(Ppi::uniform(500.0)))?;

    let edge = FOREGROUND_INSET / 2.0;
    let minutiae = (0..finger.spirals.len())
        .filter_map(|k| {
            let sp = finger.spirals[k];
            let (dir, kind) = finger.minutia_at(k);
            let (x, y) = forward(sp.x, sp.y);
            let inside = x >= edge && y >= edge && x <= w as f64 - edge && y <= h as f64 - edge;
            inside.then(|| Minutia::new(x, y, dir + imp.rotation, kind, 1.0))
        })
        .collect();
    Ok((img, GroundTruth { minutiae }))
}

/// Template from the ground-truth minutiae of a rendered print, with
/// descriptors computed from the image.
pub fn ground_truth_template<T: Real>(img: &RasterImage, truth: &GroundTruth) -> Result<Template<T>> {
    let minutiae: Vec<Minutia<T>> = truth.minutiae.iter().map(Minutia::cast).collect();
    let descriptors = describe_minutiae(img, &minutiae, &GradientHistogram)?;
    Template::new(minutiae, descriptors, 500)
}

/// Genuine-pair model on templates: rotate every minutia by `rot` about the
/// origin, translate by `trans`, add Gaussian jitter of `jitter_px`, then drop
/// `floor(drop_rate * n)` minutiae at random. Descriptors are kept.
pub fn perturb_genuine<T: Real>(
    t: &Template<T>,
    seed: u64,
    jitter_px: f64,
    drop_rate: f64,
    rot: f64,
    trans: (f64, f64),
) -> Result<Template<T>> {
    if !(0.0..=0.5).contains(&drop_rate) {
        return Err(Error::invalid("drop rate must lie in [0, 0.5]"));
    }
    if !(jitter_px >= 0.0) {
        return Err(Error::invalid("jitter must be non-negative"));
    }
    if jitter_px == 0.0 && drop_rate == 0.0 && rot == 0.0 && trans == (0.0, 0.0) {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter_px).map_err(|e| Error::invalid(e.to_string()))?;
    let (s, c) = T::of(rot).sin_cos();
    let (tx, ty) = (T::of(trans.0), T::of(trans.1));
    let moved: Vec<Minutia<T>> = t
        .minutiae()
        .iter()
        .map(|m| {
            let mut x = c * m.x - s * m.y + tx;
            let mut y = s * m.x + c * m.y + ty;
            if jitter_px > 0.0 {
                x = x + T::of(noise.sample(&mut rng));
                y = y + T::of(noise.sample(&mut rng));
            }
            Minutia::new(x, y, m.theta + T::of(rot), m.kind, m.quality)
        })
        .collect();
    let moved = t.with_minutiae(moved)?;
    let n = t.len();
    let drop = (drop_rate * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..drop {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut dropped = vec![false; n];
    order[..drop].iter().for_each(|&i| dropped[i] = true);
    moved.retain(|i| !dropped[i])
}

/// Two templates of independent synthetic fingers with different pattern
/// classes, for imposter score sets.
pub fn imposter_pair<T: Real>(seed: u64) -> Result<(Template<T>, Template<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a9f_0c3d);
    let first = Singularity::ALL[rng.random_range(0..3)];
    let second = Singularity::ALL[(first as usize + rng.random_range(1..3)) % 3];
    let make = |s: u64, singularity| -> Result<Template<T>> {
        let spec = SynthSpec { singularity, ..SynthSpec::new(s) };
        let (img, truth) = generate(&spec)?;
        ground_truth_template(&img, &truth)
    };
    let a = rng.random::<u64>();
    let b = rng.random::<u64>();
    Ok((make(a, first)?, make(b, second)?))
}

/// Colour direct-view capture: chromaticity drawn per pixel from the skin
/// model, brightness modulated by the ridge pattern.
pub fn render_direct_view(spec: &SynthSpec, skin: &SkinModel) -> Result<RasterImage> {
    skin.validate()?;
    let finger = build_finger(spec)?;
    let l = skin.cholesky();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xd1ec_7000);
    let mut data = Vec::with_capacity(spec.width * spec.height * 3);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (z0, z1): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
            let r = (skin.mean[0] + l[0][0] * z0).clamp(0.0, 1.0);
            let g = (skin.mean[1] + l[1][0] * z0 + l[1][1] * z1).clamp(0.0, 1.0 - r);
            let lum = 3.0 * (130.0 + 20.0 * finger.cos_phase(x as f64, y as f64));
            for ch in [r, g, 1.0 - r - g] {
                data.push((lum * ch).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::rgb(spec.width, spec.height, data)
}

/// Direct-view spoof stand-in: shifts chromaticity by `shift` (r, g) while
/// keeping each pixel's brightness.
pub fn spoof_direct(img: &RasterImage, shift: [f64; 2]) -> Result<RasterImage> {
    if img.channels() != 3 {
        return Err(Error::invalid("direct view must have 3 channels"));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            let sum = f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2]);
            let (r, g) = if sum > 0.0 { (f64::from(p[0]) / sum, f64::from(p[1]) / sum) } else { (1.0 / 3.0, 1.0 / 3.0) };
            let r = (r + shift[0]).clamp(0.0, 1.0);
            let g = (g + shift[1]).clamp(0.0, 1.0 - r);
            [r, g, 1.0 - r - g].map(|c| (sum * c).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    RasterImage::rgb(img.width(), img.height(), data)
}

/// FTIR spoof stand-in: flattens contrast towards the local mean gray by
/// `flatten` in [0, 1] and softens edges with a 3x3 box blur.
pub fn spoof_ftir(img: &RasterImage, flatten: f64) -> Result<RasterImage> {
    if !img.is_gray() {
        return Err(Error::invalid("FTIR view must be single-channel"));
    }
    let (w, h) = (img.width(), img.height());
    let k = 1.0 - flatten.clamp(0.0, 1.0);
    let mut out = RasterImage::filled(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    acc += f64::from(img.get(xx, yy));
                    n += 1.0;
                }
            }
            let v = 150.0 + (acc / n - 150.0) * k;
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out.with_ppi(img.ppi())
}

/// Renders a checkerboard with `rows x cols` inner corners and `square`
/// pixel squares on the board plane, projected through `board_to_image`.
/// Inner corner `(r, c)` sits at board point `((c + 1) * square,
/// (r + 1) * square)`. Pixels are 4x4 supersampled for soft edges.
pub fn render_checkerboard(
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    square: f64,
    board_to_image: &Homography<f64>,
) -> Result<RasterImage> {
    let inv = board_to_image.inverse()?;
    let (bw, bh) = ((cols + 1) as f64 * square, (rows + 1) as f64 * square);
    const SS: usize = 4;
    Ok(RasterImage::from_fn(width, height, |x, y| {
        let mut acc = 0.0;
        for j in 0..SS {
            for i in 0..SS {
                let p = Point2::new(x as f64 + (i as f64 + 0.5) / SS as f64 - 0.5, y as f64 + (j as f64 + 0.5) / SS as f64 - 0.5);
                acc += match inv.apply(p) {
                    Some(q) if q.x >= 0.0 && q.y >= 0.0 && q.x < bw && q.y < bh => {
                        let parity = ((q.x / square).floor() + (q.y / square).floor()) as i64 % 2;
                        if parity == 0 {
                            30.0
                        } else {
                            220.0
                        }
                    }
                    _ => 220.0,
                };
            }
        }
        (acc / (SS * SS) as f64).round() as u8
    }))
}
