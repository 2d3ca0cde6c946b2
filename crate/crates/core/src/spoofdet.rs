//! Presentation-attack scoring for the two capture views.
//!
//! Scores are spoofness in [0, 1]; a capture is flagged when the max-rule
//! fusion of both views reaches the threshold.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Direct,
    Ftir,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoofScore {
    pub value: f64,
    pub view: View,
}

impl SpoofScore {
    /// Clamps `value` into [0, 1]; NaN counts as certain spoof.
    pub fn new(value: f64, view: View) -> Self {
        let value = if value.is_nan() { 1.0 } else { value.clamp(0.0, 1.0) };
        SpoofScore { value, view }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoofDecision {
    pub fused: SpoofScore,
    pub direct: SpoofScore,
    pub ftir: SpoofScore,
    pub is_spoof: bool,
    pub threshold: f64,
}

/// Per-view scorer: image in, spoofness out.
pub trait SpoofScorer: Send + Sync {
    fn view(&self) -> View;
    fn score(&self, img: &RasterImage) -> Result<SpoofScore>;
}

/// Gaussian live-skin model in normalized-rg chromaticity space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinModel {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl Default for SkinModel {
    fn default() -> Self {
        SkinModel { mean: [0.46, 0.31], covariance: [[0.0012, 0.0003], [0.0003, 0.0008]] }
    }
}

const RG_BINS: usize = 32;
/// Pixels darker than this (sum of channels) carry no usable chromaticity.
const MIN_CHANNEL_SUM: u32 = 24;

impl SkinModel {
    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.covariance;
        let ok = self.mean.iter().chain([a, b, c, d].iter()).all(|v| v.is_finite())
            && (b - c).abs() <= 1e-12
            && a > 0.0
            && a * d - b * c > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("skin model covariance must be symmetric positive definite"))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: SkinModel = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, d]] = self.covariance;
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).max(0.0).sqrt();
        [[l00, 0.0], [l10, l11]]
    }

    /// Model density integrated over the rg histogram bins.
    fn histogram(&self) -> Vec<f64> {
        let [[a, b], [_, d]] = self.covariance;
        let det = a * d - b * b;
        let (ia, ib, id) = (d / det, -b / det, a / det);
        let mut h = vec![0.0; RG_BINS * RG_BINS];
        const SUB: usize = 4;
        for gy in 0..RG_BINS {
            for rx in 0..RG_BINS {
                let mut acc = 0.0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let r = (rx as f64 + (sx as f64 + 0.5) / SUB as f64) / RG_BINS as f64 - self.mean[0];
                        let g = (gy as f64 + (sy as f64 + 0.5) / SUB as f64) / RG_BINS as f64 - self.mean[1];
                        acc += (-0.5 * (ia * r * r + 2.0 * ib * r * g + id * g * g)).exp();
                    }
                }
                h[gy * RG_BINS + rx] = acc;
            }
        }
        let total: f64 = h.iter().sum();
        if total > 0.0 {
            h.iter_mut().for_each(|v| *v /= total);
        }
        h
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Direct-view scorer: Hellinger distance between the image's normalized-rg
/// histogram and the skin model, mapped through a logistic.
#[derive(Debug, Clone)]
pub struct DirectScorer {
    model: SkinModel,
    reference: Vec<f64>,
}

impl DirectScorer {
    pub fn new(model: SkinModel) -> Result<Self> {
        model.validate()?;
        Ok(DirectScorer { model, reference: model.histogram() })
    }

    pub fn model(&self) -> &SkinModel {
        &self.model
    }
}

impl Default for DirectScorer {
    fn default() -> Self {
        DirectScorer::new(SkinModel::default()).expect("default skin model is valid")
    }
}

impl SpoofScorer for DirectScorer {
    fn view(&self) -> View {
        View::Direct
    }

    fn score(&self, img: &RasterImage) -> Result<SpoofScore> {
        if img.channels() != 3 {
            return Err(Error::invalid("direct-view scoring needs a 3-channel image"));
        }
        let mut hist = vec![0.0; RG_BINS * RG_BINS];
        let mut n = 0usize;
        for px in img.data().chunks_exact(3) {
            let sum = u32::from(px[0]) + u32::from(px[1]) + u32::from(px[2]);
            if sum < MIN_CHANNEL_SUM {
                continue;
            }
            let r = f64::from(px[0]) / f64::from(sum);
            let g = f64::from(px[1]) / f64::from(sum);
            let bin = |v: f64| ((v * RG_BINS as f64) as usize).min(RG_BINS - 1);
            hist[bin(g) * RG_BINS + bin(r)] += 1.0;
            n += 1;
        }
        if n == 0 {
            return Ok(SpoofScore::new(1.0, View::Direct));
        }
        let bc: f64 = hist.iter().zip(&self.reference).map(|(h, q)| (h / n as f64 * q).sqrt()).sum();
        let hellinger = (1.0 - bc).max(0.0).sqrt();
        Ok(SpoofScore::new(logistic((hellinger - 0.5) / 0.08), View::Direct))
    }
}

/// Ridge-valley statistics of an FTIR image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtirFeatures {
    /// (p95 - p5) / 255.
    pub contrast: f64,
    /// Fraction of 16x16 blocks whose standard deviation reaches 20.
    pub textured_blocks: f64,
    /// Energy of the 16-level co-occurrence matrix at unit offsets.
    pub glcm_energy: f64,
}

impl FtirFeatures {
    pub fn measure(img: &RasterImage) -> Result<Self> {
        if !img.is_gray() {
            return Err(Error::invalid("FTIR scoring needs a single-channel image"));
        }
        let (w, h) = (img.width(), img.height());
        let mut counts = [0usize; 256];
        img.data().iter().for_each(|&v| counts[usize::from(v)] += 1);
        let n = img.data().len();
        let percentile = |q: f64| {
            let target = (q * n as f64).ceil().max(1.0) as usize;
            let mut acc = 0;
            for (v, &c) in counts.iter().enumerate() {
                acc += c;
                if acc >= target {
                    return v as f64;
                }
            }
            255.0
        };
        let contrast = (percentile(0.95) - percentile(0.05)) / 255.0;

        const BLOCK: usize = 16;
        let (mut blocks, mut textured) = (0usize, 0usize);
        for by in (0..h.saturating_sub(BLOCK - 1)).step_by(BLOCK) {
            for bx in (0..w.saturating_sub(BLOCK - 1)).step_by(BLOCK) {
                let (mut s, mut s2) = (0.0, 0.0);
                for y in by..by + BLOCK {
                    for x in bx..bx + BLOCK {
                        let v = f64::from(img.get(x, y));
                        s += v;
                        s2 += v * v;
                    }
                }
                let m = s / (BLOCK * BLOCK) as f64;
                let var = s2 / (BLOCK * BLOCK) as f64 - m * m;
                blocks += 1;
                if var >= 400.0 {
                    textured += 1;
                }
            }
        }
        let textured_blocks = if blocks == 0 { 0.0 } else { textured as f64 / blocks as f64 };

        const LEVELS: usize = 16;
        let mut glcm = [0.0f64; LEVELS * LEVELS];
        let q = |x: usize, y: usize| usize::from(img.get(x, y)) * LEVELS / 256;
        let mut pairs = 0.0;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    glcm[q(x, y) * LEVELS + q(x + 1, y)] += 1.0;
                    pairs += 1.0;
                }
                if y + 1 < h {
                    glcm[q(x, y) * LEVELS + q(x, y + 1)] += 1.0;
                    pairs += 1.0;
                }
            }
        }
        let glcm_energy = if pairs == 0.0 { 1.0 } else { glcm.iter().map(|c| (c / pairs).powi(2)).sum() };
        Ok(FtirFeatures { contrast, textured_blocks, glcm_energy })
    }
}

/// FTIR-view scorer: fixed logistic map over [`FtirFeatures`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtirScorer {
    pub bias: f64,
    pub contrast_weight: f64,
    pub texture_weight: f64,
    pub energy_weight: f64,
}

impl Default for FtirScorer {
    fn default() -> Self {
        FtirScorer { bias: 5.0, contrast_weight: -6.0, texture_weight: -5.0, energy_weight: 6.0 }
    }
}

impl SpoofScorer for FtirScorer {
    fn view(&self) -> View {
        View::Ftir
    }

    fn score(&self, img: &RasterImage) -> Result<SpoofScore> {
        let f = FtirFeatures::measure(img)?;
        let z = self.bias
            + self.contrast_weight * f.contrast
            + self.texture_weight * f.textured_blocks
            + self.energy_weight * f.glcm_energy;
        Ok(SpoofScore::new(logistic(z), View::Ftir))
    }
}

/// Max-rule fusion of a direct and an FTIR score.
pub fn fuse_max(direct: SpoofScore, ftir: SpoofScore) -> Result<SpoofScore> {
    if direct.view != View::Direct || ftir.view != View::Ftir {
        return Err(Error::invalid("fuse_max expects (direct, ftir) scores"));
    }
    Ok(SpoofScore::new(direct.value.max(ftir.value), View::Fused))
}

/// Scores both views and applies `threshold` to the fused value.
pub fn decide(
    direct_scorer: &dyn SpoofScorer,
    ftir_scorer: &dyn SpoofScorer,
    direct: &RasterImage,
    ftir: &RasterImage,
    threshold: f64,
) -> Result<SpoofDecision> {
    let (d, f) = rayon::join(|| direct_scorer.score(direct), || ftir_scorer.score(ftir));
    let (d, f) = (d?, f?);
    let fused = fuse_max(d, f)?;
    Ok(SpoofDecision { fused, direct: d, ftir: f, is_spoof: fused.value >= threshold, threshold })
}

/// Threshold chosen by [`calibrate_threshold`] with the rates it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    #[serde(with = "extended_float")]
    pub threshold: f64,
    pub target_far: f64,
    /// Fraction of calibration spoofs scoring below the threshold.
    pub achieved_far: f64,
    /// Fraction of live samples scoring below the threshold.
    pub live_pass_rate: f64,
    /// Set when the target admits every spoof and the threshold is infinite.
    pub accept_all: bool,
}

/// Largest threshold `t` for which the fraction of spoof scores below `t`
/// stays within `target_far`.
///
/// With `k = floor(target_far * n)` tolerated passes this is the `(k+1)`-th
/// smallest spoof score. A target of 1 or more tolerates every spoof and
/// yields `+inf`.
pub fn calibrate_threshold(spoof_scores: &[f64], live_scores: &[f64], target_far: f64) -> Result<ThresholdReport> {
    if spoof_scores.is_empty() || live_scores.is_empty() {
        return Err(Error::InsufficientData("spoof and live score sets must be non-empty".into()));
    }
    if !(target_far >= 0.0) {
        return Err(Error::invalid(format!("target FAR {target_far} must be non-negative")));
    }
    if spoof_scores.iter().chain(live_scores).any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut sorted = spoof_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (target_far * n as f64).floor();
    let (threshold, accept_all) = if k >= n as f64 { (f64::INFINITY, true) } else { (sorted[k as usize], false) };
    let below = |xs: &[f64]| xs.iter().filter(|&&v| v < threshold).count() as f64 / xs.len() as f64;
    Ok(ThresholdReport {
        threshold,
        target_far,
        achieved_far: below(spoof_scores),
        live_pass_rate: below(live_scores),
        accept_all,
    })
}

/// Serializes infinities as the strings `"inf"` and `"-inf"` so reports
/// stay valid JSON.
pub(crate) mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}
