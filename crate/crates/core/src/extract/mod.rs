//! Classical minutiae extraction for 500 ppi grayscale prints:
//! orientation field, Gabor enhancement, local-mean binarization,
//! Zhang-Suen thinning and crossing-number detection.

mod enhance;
mod minutiae;
mod orientation;
mod thin;

use serde::{Deserialize, Serialize};

pub use enhance::{enhance, MIN_FILTER_COHERENCE};
pub use minutiae::{crossing_number, detect_minutiae, detect_minutiae_with, Minutia, MinutiaKind, MinutiaeFilter};
pub use orientation::{orientation_field, OrientationField, BACKGROUND_VARIANCE};
pub use thin::{binarize, binarize_thin, thin, BACKGROUND, LOCAL_MEAN_WINDOW, RIDGE};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::scalar::Real;

/// Inter-ridge frequency of adult prints at 500 ppi (about 9 px period).
pub const DEFAULT_RIDGE_FREQ: f64 = 0.11;
pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub block_size: usize,
    pub ridge_freq: f64,
    pub filter: MinutiaeFilter,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { block_size: DEFAULT_BLOCK_SIZE, ridge_freq: DEFAULT_RIDGE_FREQ, filter: MinutiaeFilter::default() }
    }
}

/// Intermediate products kept for debugging and inspection.
#[derive(Debug, Clone)]
pub struct Extraction<T> {
    pub minutiae: Vec<Minutia<T>>,
    pub field: OrientationField,
    pub enhanced: RasterImage,
    pub skeleton: RasterImage,
}

/// Runs the full extraction chain on a 500 ppi grayscale image.
pub fn extract<T: Real>(img: &RasterImage, cfg: &ExtractConfig) -> Result<Extraction<T>> {
    if !img.is_gray() {
        return Err(Error::invalid("extraction expects a single-channel image"));
    }
    let field = orientation_field(img, cfg.block_size)?;
    let enhanced = enhance(img, &field, cfg.ridge_freq)?;
    let skeleton = binarize_thin(&enhanced)?;
    let minutiae = detect_minutiae_with(&skeleton, &field, &cfg.filter)?;
    Ok(Extraction { minutiae, field, enhanced, skeleton })
}

#[cfg(test)]
mod tests;
