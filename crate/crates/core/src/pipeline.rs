//! Calibrated image to template.

use crate::descriptor::{describe_minutiae, DescriptorBackend};
use crate::error::{Error, Result};
use crate::extract::{extract, ExtractConfig, Extraction};
use crate::image::RasterImage;
use crate::scalar::Real;
use crate::template::{Template, MAX_MINUTIAE};

/// Extracts minutiae and describes them. Only the `MAX_MINUTIAE`
/// highest-quality minutiae are kept.
pub fn build_template<T: Real>(
    img: &RasterImage,
    cfg: &ExtractConfig,
    backend: &dyn DescriptorBackend<T>,
) -> Result<(Template<T>, Extraction<T>)> {
    let ppi = img.ppi().map_or(500.0, |p| p.x.min(p.y)).round();
    let source_ppi = match ppi as u32 {
        500 => 500,
        1900 => 1900,
        other => return Err(Error::invalid(format!("templates need a 500 or 1900 ppi image, got {other}"))),
    };
    let extraction = extract::<T>(img, cfg)?;
    let mut minutiae = extraction.minutiae.clone();
    if minutiae.len() > MAX_MINUTIAE {
        minutiae.sort_by(|a, b| b.quality.partial_cmp(&a.quality).unwrap_or(std::cmp::Ordering::Equal));
        minutiae.truncate(MAX_MINUTIAE);
    }
    let descriptors = describe_minutiae(img, &minutiae, backend)?;
    Ok((Template::new(minutiae, descriptors, source_ppi)?, extraction))
}
