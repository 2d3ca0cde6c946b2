//! Descriptor-driven template matching.
//!
//! All probe/gallery cosines are ranked, the best `top_k` pairs are pruned to
//! a mutually consistent set by greedy clique growth, and the score is the sum
//! of the surviving similarities.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::descriptor::dot;
use crate::error::{Error, Result};
use crate::geometry::{angle_diff, wrap_two_pi};
use crate::scalar::Real;
use crate::template::Template;

pub const DEFAULT_TOP_K: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub top_k: usize,
    /// Distance tolerance in pixels at 500 ppi.
    pub distance_tolerance: f64,
    /// Angular tolerance in radians.
    pub angle_tolerance: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig { top_k: DEFAULT_TOP_K, distance_tolerance: 15.0, angle_tolerance: PI / 12.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair<T> {
    /// Probe minutia index.
    pub i: usize,
    /// Gallery minutia index.
    pub j: usize,
    pub sim: T,
}

impl<T> CandidatePair<T> {
    fn transposed(self) -> Self {
        CandidatePair { i: self.j, j: self.i, sim: self.sim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<T> {
    pub score: T,
    /// Consistent set in selection order.
    pub pairs: Vec<CandidatePair<T>>,
    pub decision: Decision,
    pub threshold_used: T,
}

/// Ranks all probe x gallery cosines by (sim desc, i, j) and keeps the top `k`.
pub fn candidate_pairs<T: Real>(probe: &Template<T>, gallery: &Template<T>, k: usize) -> Result<Vec<CandidatePair<T>>> {
    if probe.is_empty() || gallery.is_empty() {
        return Ok(Vec::new());
    }
    if probe.dim() != gallery.dim() {
        return Err(Error::invalid(format!("descriptor dimensions differ: {} vs {}", probe.dim(), gallery.dim())));
    }
    let mut pairs = Vec::with_capacity(probe.len() * gallery.len());
    for (i, a) in probe.descriptors().iter().enumerate() {
        for (j, b) in gallery.descriptors().iter().enumerate() {
            pairs.push(CandidatePair { i, j, sim: dot(a.values(), b.values()) });
        }
    }
    let order = |a: &CandidatePair<T>, b: &CandidatePair<T>| {
        b.sim.partial_cmp(&a.sim).unwrap_or(Ordering::Equal).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j))
    };
    if pairs.len() > k && k > 0 {
        pairs.select_nth_unstable_by(k - 1, order);
        pairs.truncate(k);
    }
    pairs.truncate(k);
    pairs.sort_unstable_by(order);
    Ok(pairs)
}

/// Distance tolerance after scaling by the templates' mean ppi.
fn distance_tolerance<T: Real>(probe: &Template<T>, gallery: &Template<T>, cfg: &MatcherConfig) -> f64 {
    let ppi = (f64::from(probe.source_ppi()) + f64::from(gallery.source_ppi())) / 2.0;
    cfg.distance_tolerance * ppi / 500.0
}

/// Edge test of the compatibility graph between two candidate pairs.
///
/// Pairs must not share a minutia on either side, the two inter-minutia
/// distances must agree within the distance tolerance, and the relative
/// direction plus the two radial angles must agree within the angle
/// tolerance.
pub fn compatible<T: Real>(
    p: &CandidatePair<T>,
    q: &CandidatePair<T>,
    probe: &Template<T>,
    gallery: &Template<T>,
    cfg: &MatcherConfig,
) -> bool {
    compatible_with(p, q, probe, gallery, distance_tolerance(probe, gallery, cfg), cfg.angle_tolerance)
}

fn compatible_with<T: Real>(
    p: &CandidatePair<T>,
    q: &CandidatePair<T>,
    probe: &Template<T>,
    gallery: &Template<T>,
    dist_tol: f64,
    angle_tol: f64,
) -> bool {
    if p.i == q.i || p.j == q.j {
        return false;
    }
    let (a1, b1) = (&probe.minutiae()[p.i], &probe.minutiae()[q.i]);
    let (a2, b2) = (&gallery.minutiae()[p.j], &gallery.minutiae()[q.j]);
    let d1 = a1.distance(b1).as_f64();
    let d2 = a2.distance(b2).as_f64();
    if (d1 - d2).abs() >= dist_tol {
        return false;
    }
    let tol = T::of(angle_tol);
    let rel = |a: T, b: T| wrap_two_pi(a - b);
    if angle_diff(rel(a1.theta, b1.theta), rel(a2.theta, b2.theta)) >= tol {
        return false;
    }
    if d1 == 0.0 || d2 == 0.0 {
        return true;
    }
    let bearing = |ax: T, ay: T, bx: T, by: T| (by - ay).atan2(bx - ax);
    let ra1 = rel(bearing(a1.x, a1.y, b1.x, b1.y), a1.theta);
    let ra2 = rel(bearing(a2.x, a2.y, b2.x, b2.y), a2.theta);
    let rb1 = rel(bearing(b1.x, b1.y, a1.x, a1.y), b1.theta);
    let rb2 = rel(bearing(b2.x, b2.y, a2.x, a2.y), b2.theta);
    angle_diff(ra1, ra2) < tol && angle_diff(rb1, rb2) < tol
}

/// Greedy clique growth over pairs sorted by descending similarity.
///
/// A pair joins the set only when it is compatible with every pair already
/// selected. Pairs with non-positive similarity cannot raise the score and
/// are never selected.
pub fn consistency_filter<T: Real>(
    pairs: &[CandidatePair<T>],
    probe: &Template<T>,
    gallery: &Template<T>,
    cfg: &MatcherConfig,
) -> Vec<CandidatePair<T>> {
    let dist_tol = distance_tolerance(probe, gallery, cfg);
    let mut selected: Vec<CandidatePair<T>> = Vec::new();
    for p in pairs {
        if p.sim <= T::zero() {
            continue;
        }
        if selected.iter().all(|q| compatible_with(p, q, probe, gallery, dist_tol, cfg.angle_tolerance)) {
            selected.push(*p);
        }
    }
    selected
}

/// True when `b` should be the row side of the comparison.
fn swap_sides<T: Real>(a: &Template<T>, b: &Template<T>) -> bool {
    let key = |t: &Template<T>| t.descriptor_hash();
    match key(a).cmp(&key(b)) {
        Ordering::Less => false,
        Ordering::Greater => true,
        Ordering::Equal => {
            let bits = |t: &Template<T>| t.descriptors().iter().flat_map(|d| d.values().iter().map(|v| v.bits())).collect::<Vec<_>>();
            bits(a) > bits(b)
        }
    }
}

/// Compares two templates. The side with the smaller descriptor hash is
/// always processed as the row side, so `match(a, b)` and `match(b, a)` give
/// the same score. Returned pairs are indexed as (probe, gallery).
pub fn match_templates<T: Real>(
    probe: &Template<T>,
    gallery: &Template<T>,
    threshold: T,
    cfg: &MatcherConfig,
) -> Result<MatchResult<T>> {
    let reject = |score: T, pairs| MatchResult { score, pairs, decision: Decision::Reject, threshold_used: threshold };
    if probe.is_empty() || gallery.is_empty() {
        return Ok(reject(T::zero(), Vec::new()));
    }
    let swap = swap_sides(probe, gallery);
    let (rows, cols) = if swap { (gallery, probe) } else { (probe, gallery) };
    let candidates = candidate_pairs(rows, cols, cfg.top_k)?;
    let mut pairs = consistency_filter(&candidates, rows, cols, cfg);
    if swap {
        pairs = pairs.into_iter().map(CandidatePair::transposed).collect();
    }
    let score = pairs.iter().map(|p| p.sim).fold(T::zero(), |a, b| a + b);
    let mut result = reject(score, pairs);
    if score >= threshold {
        result.decision = Decision::Accept;
    }
    Ok(result)
}
