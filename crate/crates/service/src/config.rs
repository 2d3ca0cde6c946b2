//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use matchbox_core::calib::TargetPpi;
use matchbox_core::gallery::Thresholds;
use matchbox_core::matcher::MatcherConfig;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Environment variable consulted when no `--config` path is given.
pub const CONFIG_ENV: &str = "MATCHBOX_CONFIG";

pub const DEFAULT_SPOOF_THRESHOLD: f64 = 0.5;

/// Settings shared by the HTTP service and the CLI verbs.
///
/// ```json
/// {
///   "gallery_dir": "/var/lib/matchbox/gallery",
///   "calibration_profile": "profile.json",
///   "skin_model": null,
///   "spoof_threshold": 0.5,
///   "thresholds": { "verify": 12.0, "identify": 12.0 },
///   "target_ppi": 500,
///   "workers": 0,
///   "matcher": { "top_k": 120, "distance_tolerance": 15.0, "angle_tolerance": 0.2618 }
/// }
/// ```
///
/// Only `gallery_dir` is required. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub gallery_dir: PathBuf,
    /// Rectification profile applied to FTIR captures. Without one, captures
    /// are taken to be rectified already.
    #[serde(default)]
    pub calibration_profile: Option<PathBuf>,
    /// Live-skin model for the direct view; the built-in model when absent.
    #[serde(default)]
    pub skin_model: Option<PathBuf>,
    #[serde(default = "default_spoof_threshold")]
    pub spoof_threshold: f64,
    /// Overrides the thresholds stored in the gallery when present.
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default = "default_target_ppi")]
    pub target_ppi: TargetPpi,
    /// Search threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub matcher: MatcherConfig,
}

fn default_spoof_threshold() -> f64 {
    DEFAULT_SPOOF_THRESHOLD
}

fn default_target_ppi() -> TargetPpi {
    TargetPpi::Adult
}

impl PipelineConfig {
    pub fn for_gallery(dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            gallery_dir: dir.into(),
            calibration_profile: None,
            skin_model: None,
            spoof_threshold: DEFAULT_SPOOF_THRESHOLD,
            thresholds: None,
            target_ppi: TargetPpi::Adult,
            workers: 0,
            matcher: MatcherConfig::default(),
        }
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ApiError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ApiError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| ApiError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.gallery_dir);
        cfg.calibration_profile.as_mut().map(resolve);
        cfg.skin_model.as_mut().map(resolve);
        Ok(cfg)
    }

    /// Loads `explicit` if given, else the file named by `MATCHBOX_CONFIG`.
    pub fn locate(explicit: Option<&Path>) -> Result<Self, ApiError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(PathBuf::from(p)),
                None => Err(ApiError::config(format!("no config given and {CONFIG_ENV} is not set"))),
            },
        }
    }

    /// Checks value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<(), ApiError> {
        if !self.gallery_dir.is_dir() {
            return Err(ApiError::config(format!("gallery directory {} does not exist", self.gallery_dir.display())));
        }
        for p in [&self.calibration_profile, &self.skin_model].into_iter().flatten() {
            if !p.is_file() {
                return Err(ApiError::config(format!("{} does not exist", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.spoof_threshold) {
            return Err(ApiError::config(format!("spoof threshold {} outside [0, 1]", self.spoof_threshold)));
        }
        Ok(())
    }
}
