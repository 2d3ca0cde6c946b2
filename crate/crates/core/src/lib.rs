//! Portable fingerprint recognition engine.
//!
//! The crate covers the whole capture-to-decision path of a desk-scale
//! fingerprint reader:
//!
//! - [`calib`]: grayscale conversion, histogram equalization, perspective
//!   rectification and ppi scaling, with checkerboard-driven parameter
//!   estimation.
//! - [`extract`]: orientation field, Gabor enhancement, thinning and
//!   crossing-number minutiae detection.
//! - [`descriptor`]: orientation-canonical 96x96 patches and unit-norm
//!   gradient-histogram descriptors.
//! - [`matcher`]: cosine candidate pairs, geometric consistency filter and
//!   summed-similarity score.
//! - [`spoofdet`]: per-view spoofness scorers fused with the max rule.
//! - [`gallery`]: durable enrollment store with 1:1 verification and 1:N
//!   identification.
//! - [`synth`]: deterministic synthetic prints with ground-truth minutiae.
//!
//! The geometric and matching core is generic over the scalar type through
//! [`Real`]; the aliases at the crate root fix the concrete types used by the
//! file formats and the gallery (`f32` templates, `f64` calibration).

pub mod calib;
pub mod descriptor;
mod error;
pub mod extract;
mod filters;
pub mod gallery;
pub mod geometry;
pub mod image;
pub mod matcher;
pub mod pipeline;
mod scalar;
pub mod spoofdet;
pub mod synth;
pub mod template;

pub use error::{Error, Result};
pub use scalar::Real;

pub use extract::MinutiaKind;
pub use image::RasterImage;

/// Minutia with `f32` coordinates, as stored in `.mbt` files.
pub type Minutia = extract::Minutia<f32>;
/// Unit-norm descriptor with `f32` components.
pub type Descriptor = descriptor::Descriptor<f32>;
/// Template as stored in the gallery.
pub type Template = template::Template<f32>;
/// Match outcome for gallery templates.
pub type MatchResult = matcher::MatchResult<f32>;
/// Candidate pair for gallery templates.
pub type CandidatePair = matcher::CandidatePair<f32>;
/// Calibration homography.
pub type Homography = geometry::Homography<f64>;
/// 2D point used by calibration.
pub type Point2 = geometry::Point2<f64>;
