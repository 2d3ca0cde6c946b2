use std::f64::consts::PI;

use super::OrientationField;
use crate::error::{Error, Result};
use crate::image::RasterImage;

/// Pixels below this coherence are copied through unfiltered.
pub const MIN_FILTER_COHERENCE: f64 = 0.2;

const ORIENTATIONS: usize = 24;

struct Kernel {
    radius: isize,
    taps: Vec<f32>,
}

fn gabor_bank(freq: f64) -> Vec<Kernel> {
    let sigma_across = 0.38 / freq;
    let sigma_along = 0.45 / freq;
    let radius = (2.5 * sigma_along).ceil() as isize;
    (0..ORIENTATIONS)
        .map(|k| {
            let theta = k as f64 * PI / ORIENTATIONS as f64;
            let (s, c) = theta.sin_cos();
            let mut env = Vec::new();
            let mut carrier = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (x, y) = (dx as f64, dy as f64);
                    let along = x * c + y * s;
                    let across = -x * s + y * c;
                    env.push(
                        (-(along * along) / (2.0 * sigma_along * sigma_along)
                            - (across * across) / (2.0 * sigma_across * sigma_across))
                            .exp(),
                    );
                    carrier.push((2.0 * PI * freq * across).cos());
                }
            }
            // Remove the DC term so flat regions give zero response.
            let dc = env.iter().zip(&carrier).map(|(e, c)| e * c).sum::<f64>() / env.iter().sum::<f64>();
            let taps = env.iter().zip(&carrier).map(|(e, c)| (e * (c - dc)) as f32).collect();
            Kernel { radius, taps }
        })
        .collect()
}

/// Orientation-tuned Gabor filtering at a fixed ridge frequency.
///
/// Responses are scaled by their spread over the filtered pixels and mapped
/// around mid-gray so that ridges saturate dark and valleys bright.
/// Low-coherence and background pixels are copied through.
pub fn enhance(img: &RasterImage, field: &OrientationField, freq: f64) -> Result<RasterImage> {
    if !img.is_gray() {
        return Err(Error::invalid("enhance expects a single-channel image"));
    }
    if !(0.05..=0.25).contains(&freq) {
        return Err(Error::invalid(format!("ridge frequency {freq} outside [0.05, 0.25]")));
    }
    let (w, h) = (img.width(), img.height());
    if field.image_size() != (w, h) {
        return Err(Error::invalid("orientation field does not match image size"));
    }
    let bank = gabor_bank(freq);
    let src = img.to_f32();
    let mut response = vec![f32::NAN; w * h];

    for y in 0..h {
        for x in 0..w {
            let (angle, coherence) = field.at(x as f64 + 0.5, y as f64 + 0.5);
            if coherence < MIN_FILTER_COHERENCE || !field.pixel_foreground(x, y) {
                continue;
            }
            let k = ((angle / PI * ORIENTATIONS as f64).round() as usize) % ORIENTATIONS;
            let kernel = &bank[k];
            let r = kernel.radius;
            let side = (2 * r + 1) as usize;
            let mut acc = 0.0f32;
            let (xi, yi) = (x as isize, y as isize);
            if xi >= r && yi >= r && xi + r < w as isize && yi + r < h as isize {
                for (ky, row) in kernel.taps.chunks_exact(side).enumerate() {
                    let base = (yi - r + ky as isize) as usize * w + (xi - r) as usize;
                    let line = &src[base..base + side];
                    acc += row.iter().zip(line).map(|(a, b)| a * b).sum::<f32>();
                }
            } else {
                for (ky, row) in kernel.taps.chunks_exact(side).enumerate() {
                    let yy = (yi - r + ky as isize).clamp(0, h as isize - 1) as usize;
                    for (kx, t) in row.iter().enumerate() {
                        let xx = (xi - r + kx as isize).clamp(0, w as isize - 1) as usize;
                        acc += t * src[yy * w + xx];
                    }
                }
            }
            response[y * w + x] = acc;
        }
    }

    let filtered: Vec<f64> = response.iter().filter(|v| !v.is_nan()).map(|&v| f64::from(v)).collect();
    let spread = if filtered.is_empty() {
        1.0
    } else {
        let mean = filtered.iter().sum::<f64>() / filtered.len() as f64;
        let var = filtered.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / filtered.len() as f64;
        var.sqrt().max(1e-6)
    };
    let data = response
        .iter()
        .zip(img.data())
        .map(|(&r, &orig)| {
            if r.is_nan() {
                orig
            } else {
                (128.0 + 127.0 * f64::from(r) / spread).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    RasterImage::gray(w, h, data)?.with_ppi(img.ppi())
}
