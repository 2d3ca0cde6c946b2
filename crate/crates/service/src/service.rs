//! Request pipeline shared by the HTTP adapter and the CLI.
//!
//! Every operation takes raw PGM/PPM bytes, runs decode, calibration,
//! spoof check and extraction in that order, and returns a serializable
//! response that carries per-stage timings.

use std::collections::BTreeMap;
use std::time::Instant;

use matchbox_core::calib::{calibrate_capture, to_grayscale, CalibrationProfile};
use matchbox_core::descriptor::GradientHistogram;
use matchbox_core::extract::ExtractConfig;
use matchbox_core::gallery::{GalleryOptions, GalleryStats, GalleryStore, RecordSummary, SearchHit};
use matchbox_core::image::{Ppi, RasterImage};
use matchbox_core::matcher::Decision;
use matchbox_core::pipeline::build_template;
use matchbox_core::spoofdet::{decide, DirectScorer, FtirScorer, SkinModel};
use matchbox_core::Template;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::error::{ApiError, ErrorCode};

pub type TimingsMs = BTreeMap<String, f64>;

/// Wall-clock time per pipeline stage, in milliseconds.
#[derive(Debug)]
pub struct Timings {
    start: Instant,
    stages: TimingsMs,
}

impl Default for Timings {
    fn default() -> Self {
        Timings { start: Instant::now(), stages: BTreeMap::new() }
    }
}

impl Timings {
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let out = f();
        *self.stages.entry(stage.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64() * 1e3;
        out
    }

    /// Stage timings plus a `total` entry.
    pub fn finish(mut self) -> TimingsMs {
        self.stages.insert("total".into(), self.start.elapsed().as_secs_f64() * 1e3);
        self.stages
    }
}

/// Error body: `{"error": {...}, "timings_ms": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub error: ApiError,
    pub timings_ms: TimingsMs,
}

impl Failure {
    pub fn new(error: impl Into<ApiError>, timings: Timings) -> Self {
        Failure { error: error.into(), timings_ms: timings.finish() }
    }
}

impl From<ApiError> for Failure {
    fn from(error: ApiError) -> Self {
        Failure::new(error, Timings::default())
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Per-view and fused spoofness of one capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoofReport {
    pub direct: f64,
    pub ftir: f64,
    pub fused: f64,
    pub threshold: f64,
    pub is_spoof: bool,
}

/// One capture as uploaded: the FTIR view and, optionally, the direct view.
#[derive(Debug, Clone, Default)]
pub struct Capture {
    pub ftir: Vec<u8>,
    pub direct: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub minutiae: usize,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub record: RecordSummary,
    pub spoof: Option<SpoofReport>,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyResponse {
    pub hits: Vec<SearchHit>,
    /// Identification threshold in force; hits below it are candidates only.
    pub threshold: f64,
    pub probe: ProbeSummary,
    pub spoof: Option<SpoofReport>,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub subject_id: String,
    pub finger: u8,
    pub score: f64,
    pub matched_pairs: usize,
    pub decision: Decision,
    pub threshold: f64,
    pub probe: ProbeSummary,
    pub spoof: Option<SpoofReport>,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoofCheckResponse {
    pub spoof: SpoofReport,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResponse {
    pub record: RecordSummary,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub stats: GalleryStats,
    pub timings_ms: TimingsMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub timings_ms: TimingsMs,
}

pub fn health() -> HealthResponse {
    let t = Timings::default();
    HealthResponse { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into(), timings_ms: t.finish() }
}

/// Everything in front of the gallery: decoding, spoof scoring,
/// calibration and template extraction.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub profile: Option<CalibrationProfile>,
    pub direct_scorer: DirectScorer,
    pub ftir_scorer: FtirScorer,
    pub spoof_threshold: f64,
    pub target_ppi: matchbox_core::calib::TargetPpi,
    pub extract: ExtractConfig,
}

impl Frontend {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, ApiError> {
        let profile = cfg.calibration_profile.as_ref().map(CalibrationProfile::load).transpose()?;
        let skin = cfg.skin_model.as_ref().map(SkinModel::load).transpose()?.unwrap_or_default();
        Ok(Frontend {
            profile,
            direct_scorer: DirectScorer::new(skin)?,
            ftir_scorer: FtirScorer::default(),
            spoof_threshold: cfg.spoof_threshold,
            target_ppi: cfg.target_ppi,
            extract: ExtractConfig::default(),
        })
    }

    fn decode(bytes: &[u8], what: &str) -> Result<RasterImage, ApiError> {
        RasterImage::from_netpbm(bytes)
            .map_err(|e| ApiError::new(ErrorCode::InvalidImage, format!("{what} image: {e}")))
    }

    fn decode_ftir(bytes: &[u8]) -> Result<RasterImage, ApiError> {
        let img = Self::decode(bytes, "ftir")?;
        Ok(if img.is_gray() { img } else { to_grayscale(&img)? })
    }

    /// Scores both views; never rejects.
    pub fn score(&self, direct: &RasterImage, ftir: &RasterImage) -> Result<SpoofReport, ApiError> {
        if direct.channels() != 3 {
            return Err(ApiError::new(ErrorCode::InvalidImage, "direct view must be a colour (PPM) image"));
        }
        let d = decide(&self.direct_scorer, &self.ftir_scorer, direct, ftir, self.spoof_threshold)?;
        Ok(SpoofReport {
            direct: d.direct.value,
            ftir: d.ftir.value,
            fused: d.fused.value,
            threshold: d.threshold,
            is_spoof: d.is_spoof,
        })
    }

    pub fn spoof_check(&self, direct: &[u8], ftir: &[u8]) -> Outcome<SpoofCheckResponse> {
        let mut t = Timings::default();
        let decoded = t.time("decode", || -> Result<_, ApiError> { Ok((Self::decode(direct, "direct")?, Self::decode_ftir(ftir)?)) });
        let (d, f) = match decoded {
            Ok(v) => v,
            Err(e) => return Err(Failure::new(e, t)),
        };
        match t.time("spoof", || self.score(&d, &f)) {
            Ok(spoof) => Ok(SpoofCheckResponse { spoof, timings_ms: t.finish() }),
            Err(e) => Err(Failure::new(e, t)),
        }
    }

    /// Full front pipeline: decode, calibrate, spoof check, extract. A spoof
    /// verdict aborts with `spoof_detected` before any feature extraction.
    /// The calibration profile applies to the FTIR view only.
    pub fn probe(&self, capture: &Capture, t: &mut Timings) -> Result<(Template, Option<SpoofReport>), ApiError> {
        let (ftir, direct) = t.time("decode", || -> Result<_, ApiError> {
            let direct = capture.direct.as_deref().map(|b| Self::decode(b, "direct")).transpose()?;
            Ok((Self::decode_ftir(&capture.ftir)?, direct))
        })?;
        let calibrated = t.time("calibrate", || -> Result<_, ApiError> {
            Ok(match &self.profile {
                Some(p) => calibrate_capture(&ftir, p, self.target_ppi)?.image,
                None if ftir.ppi().is_none() => ftir.with_ppi(Some(Ppi::uniform(self.target_ppi.value())))?,
                None => ftir,
            })
        })?;
        let spoof = match &direct {
            Some(d) => {
                let report = t.time("spoof", || self.score(d, &calibrated))?;
                if report.is_spoof {
                    return Err(ApiError::new(
                        ErrorCode::SpoofDetected,
                        format!("fused spoofness {:.3} reaches threshold {:.3}", report.fused, report.threshold),
                    )
                    .with_details(serde_json::to_value(report).expect("report serializes")));
                }
                Some(report)
            }
            None => None,
        };
        let (template, _) =
            t.time("extract", || build_template::<f32>(&calibrated, &self.extract, &GradientHistogram))?;
        Ok((template, spoof))
    }
}

fn summary(t: &Template) -> ProbeSummary {
    ProbeSummary { minutiae: t.len(), quality: f64::from(t.quality_summary()) }
}

/// The gallery plus its front pipeline.
pub struct Service {
    pub frontend: Frontend,
    pub store: GalleryStore,
}

impl Service {
    /// Opens the configured gallery. With `create`, a missing gallery
    /// directory is created instead of rejected.
    pub fn open(cfg: &PipelineConfig, create: bool) -> Result<Self, ApiError> {
        if create && !cfg.gallery_dir.exists() {
            std::fs::create_dir_all(&cfg.gallery_dir)
                .map_err(|e| ApiError::new(ErrorCode::StorageError, format!("{}: {e}", cfg.gallery_dir.display())))?;
        }
        cfg.validate()?;
        let frontend = Frontend::from_config(cfg)?;
        let opts = GalleryOptions { workers: cfg.workers, matcher: cfg.matcher, ..GalleryOptions::default() };
        let store = GalleryStore::open(&cfg.gallery_dir, opts)?;
        if let Some(th) = cfg.thresholds {
            if th != store.thresholds() {
                store.set_thresholds(th)?;
            }
        }
        Ok(Service { frontend, store })
    }

    pub fn enroll(&self, subject_id: &str, finger: u8, capture: &Capture, metadata: Value) -> Outcome<EnrollResponse> {
        let mut t = Timings::default();
        let run = |t: &mut Timings| -> Result<_, ApiError> {
            if subject_id.is_empty() {
                return Err(ApiError::invalid("subject_id must not be empty"));
            }
            if self.store.get(subject_id).is_some() {
                return Err(ApiError::new(ErrorCode::DuplicateSubject, format!("subject `{subject_id}` is already enrolled")));
            }
            let (template, spoof) = self.frontend.probe(capture, t)?;
            if template.is_empty() {
                return Err(ApiError::new(ErrorCode::NoMinutiae, "no minutiae found in the capture"));
            }
            let record = t.time("enroll", || self.store.enroll(subject_id, BTreeMap::from([(finger, template)]), metadata))?;
            Ok((record.summary(), spoof))
        };
        match run(&mut t) {
            Ok((record, spoof)) => Ok(EnrollResponse { record, spoof, timings_ms: t.finish() }),
            Err(e) => Err(Failure::new(e, t)),
        }
    }

    pub fn identify(&self, capture: &Capture, top_n: usize) -> Outcome<IdentifyResponse> {
        let mut t = Timings::default();
        let run = |t: &mut Timings| -> Result<_, ApiError> {
            if top_n == 0 {
                return Err(ApiError::invalid("top_n must be at least 1"));
            }
            if self.store.is_empty() {
                return Err(ApiError::new(ErrorCode::EmptyGallery, "the gallery has no enrolled subjects"));
            }
            let (probe, spoof) = self.frontend.probe(capture, t)?;
            let hits = t.time("search", || self.store.identify(&probe, top_n))?;
            Ok((hits, summary(&probe), spoof))
        };
        match run(&mut t) {
            Ok((hits, probe, spoof)) => Ok(IdentifyResponse {
                hits,
                threshold: self.store.thresholds().identify,
                probe,
                spoof,
                timings_ms: t.finish(),
            }),
            Err(e) => Err(Failure::new(e, t)),
        }
    }

    pub fn verify(&self, subject_id: &str, finger: u8, capture: &Capture) -> Outcome<VerifyResponse> {
        let mut t = Timings::default();
        let run = |t: &mut Timings| -> Result<_, ApiError> {
            let record = self
                .store
                .get(subject_id)
                .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("subject `{subject_id}` is not enrolled")))?;
            if !record.fingers.contains_key(&finger) {
                return Err(ApiError::new(ErrorCode::NotFound, format!("subject `{subject_id}` has no finger {finger}")));
            }
            let (probe, spoof) = self.frontend.probe(capture, t)?;
            let r = t.time("match", || self.store.verify(subject_id, finger, &probe))?;
            Ok((r, summary(&probe), spoof))
        };
        match run(&mut t) {
            Ok((r, probe, spoof)) => Ok(VerifyResponse {
                subject_id: subject_id.to_string(),
                finger,
                score: f64::from(r.score),
                matched_pairs: r.pairs.len(),
                decision: r.decision,
                threshold: f64::from(r.threshold_used),
                probe,
                spoof,
                timings_ms: t.finish(),
            }),
            Err(e) => Err(Failure::new(e, t)),
        }
    }

    pub fn subject(&self, subject_id: &str) -> Outcome<SubjectResponse> {
        let t = Timings::default();
        match self.store.get(subject_id) {
            Some(r) => Ok(SubjectResponse { record: r.summary(), timings_ms: t.finish() }),
            None => Err(Failure::new(ApiError::new(ErrorCode::NotFound, format!("subject `{subject_id}` is not enrolled")), t)),
        }
    }

    pub fn stats(&self) -> StatsResponse {
        let t = Timings::default();
        StatsResponse { stats: self.store.stats(), timings_ms: t.finish() }
    }
}
