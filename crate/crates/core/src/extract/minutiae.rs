use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::thin::RIDGE;
use super::OrientationField;
use crate::error::{Error, Result};
use crate::geometry::{angle_diff, wrap_two_pi};
use crate::image::RasterImage;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinutiaKind {
    Ending,
    Bifurcation,
}

impl MinutiaKind {
    pub fn code(self) -> u8 {
        match self {
            MinutiaKind::Ending => 0,
            MinutiaKind::Bifurcation => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MinutiaKind::Ending),
            1 => Some(MinutiaKind::Bifurcation),
            _ => None,
        }
    }
}

/// Ridge ending or bifurcation.
///
/// `theta` is in `[0, 2pi)` with `y` pointing down. It points from the
/// minutia into the fringe that terminates there: along the ridge for an
/// ending, along the valley between the two branches for a bifurcation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
    pub kind: MinutiaKind,
    pub quality: T,
}

impl<T: Real> Minutia<T> {
    pub fn new(x: T, y: T, theta: T, kind: MinutiaKind, quality: T) -> Self {
        Minutia { x, y, theta: wrap_two_pi(theta), kind, quality: quality.max(T::zero()).min(T::one()) }
    }

    pub fn cast<U: Real>(&self) -> Minutia<U> {
        Minutia {
            x: U::of(self.x.as_f64()),
            y: U::of(self.y.as_f64()),
            theta: wrap_two_pi(U::of(self.theta.as_f64())),
            kind: self.kind,
            quality: U::of(self.quality.as_f64()),
        }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Post-detection clean-up rules. Distances are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinutiaeFilter {
    /// Drop minutiae closer than this to background blocks or the image edge.
    pub border_margin: f64,
    /// Drop pairs of endings facing each other across a gap shorter than this.
    pub facing_endings: f64,
    /// Keep only the higher-quality minutia of pairs closer than this.
    pub merge_distance: f64,
    /// Drop ending/bifurcation spurs and isolated segments no longer than this
    /// many skeleton steps.
    pub spur_length: usize,
    pub min_quality: f64,
}

impl Default for MinutiaeFilter {
    fn default() -> Self {
        MinutiaeFilter { border_margin: 16.0, facing_endings: 8.0, merge_distance: 6.0, spur_length: 8, min_quality: 0.0 }
    }
}

impl MinutiaeFilter {
    /// Reports every crossing-number hit.
    pub fn none() -> Self {
        MinutiaeFilter { border_margin: 0.0, facing_endings: 0.0, merge_distance: 0.0, spur_length: 0, min_quality: 0.0 }
    }
}

/// Half the number of ridge/background changes around the cyclic
/// 8-neighbourhood; pixels outside the image count as background.
pub fn crossing_number(skel: &RasterImage, x: usize, y: usize) -> u8 {
    let p = ring(skel, x as isize, y as isize);
    let changes: u8 = (0..8).map(|k| u8::from(p[k] != p[(k + 1) % 8])).sum();
    changes / 2
}

const OFFSETS: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

#[inline]
fn is_ridge(skel: &RasterImage, x: isize, y: isize) -> bool {
    x >= 0
        && y >= 0
        && (x as usize) < skel.width()
        && (y as usize) < skel.height()
        && skel.get(x as usize, y as usize) == RIDGE
}

#[inline]
fn ring(skel: &RasterImage, x: isize, y: isize) -> [bool; 8] {
    std::array::from_fn(|k| is_ridge(skel, x + OFFSETS[k].0, y + OFFSETS[k].1))
}

fn cn_at(skel: &RasterImage, x: isize, y: isize) -> u8 {
    let p = ring(skel, x, y);
    (0..8).map(|k| u8::from(p[k] != p[(k + 1) % 8])).sum::<u8>() / 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stop {
    Length,
    Ending,
    Junction,
}

struct Trace {
    end: (isize, isize),
    steps: usize,
    stop: Stop,
}

const TRACE_LENGTH: usize = 12;

/// Follows the skeleton from `start`, never revisiting `visited`.
fn trace(skel: &RasterImage, start: (isize, isize), visited: &mut Vec<(isize, isize)>, max: usize) -> Trace {
    let mut cur = start;
    visited.push(cur);
    let mut steps = 0;
    loop {
        if steps >= max {
            return Trace { end: cur, steps, stop: Stop::Length };
        }
        if steps > 0 && cn_at(skel, cur.0, cur.1) >= 3 {
            return Trace { end: cur, steps, stop: Stop::Junction };
        }
        let mut next = None;
        // 4-neighbours first so diagonal shortcuts do not skip pixels.
        for k in [0usize, 2, 4, 6, 1, 3, 5, 7] {
            let q = (cur.0 + OFFSETS[k].0, cur.1 + OFFSETS[k].1);
            if is_ridge(skel, q.0, q.1) && !visited.contains(&q) {
                next = Some(q);
                break;
            }
        }
        match next {
            Some(q) => {
                visited.push(q);
                cur = q;
                steps += 1;
            }
            None => return Trace { end: cur, steps, stop: Stop::Ending },
        }
    }
}

struct Candidate {
    x: isize,
    y: isize,
    kind: MinutiaKind,
    theta: f64,
    quality: f64,
    keep: bool,
}

/// Crossing-number minutiae with the default clean-up rules.
pub fn detect_minutiae<T: Real>(skel: &RasterImage, field: &OrientationField) -> Result<Vec<Minutia<T>>> {
    detect_minutiae_with(skel, field, &MinutiaeFilter::default())
}

/// Crossing-number detection: CN = 1 is an ending, CN = 3 a bifurcation.
/// Pixels on the outermost image row/column are never reported.
pub fn detect_minutiae_with<T: Real>(
    skel: &RasterImage,
    field: &OrientationField,
    filter: &MinutiaeFilter,
) -> Result<Vec<Minutia<T>>> {
    if !skel.is_gray() {
        return Err(Error::invalid("skeleton must be single-channel"));
    }
    if field.image_size() != (skel.width(), skel.height()) {
        return Err(Error::invalid("orientation field does not match skeleton size"));
    }
    let (w, h) = (skel.width() as isize, skel.height() as isize);
    let mut cands: Vec<Candidate> = Vec::new();
    let mut spurs: Vec<((isize, isize), (isize, isize))> = Vec::new();
    let mut short_segments: Vec<((isize, isize), (isize, isize))> = Vec::new();

    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !is_ridge(skel, x, y) {
                continue;
            }
            let cn = cn_at(skel, x, y);
            let (kind, traced) = match cn {
                1 => {
                    let mut visited = Vec::with_capacity(TRACE_LENGTH + 2);
                    let t = trace(skel, (x, y), &mut visited, TRACE_LENGTH);
                    if filter.spur_length > 0 && t.steps <= filter.spur_length {
                        match t.stop {
                            Stop::Junction => spurs.push(((x, y), t.end)),
                            Stop::Ending => short_segments.push(((x, y), t.end)),
                            Stop::Length => {}
                        }
                    }
                    let theta = ((t.end.1 - y) as f64).atan2((t.end.0 - x) as f64);
                    (MinutiaKind::Ending, theta)
                }
                3 => (MinutiaKind::Bifurcation, bifurcation_direction(skel, x, y)),
                _ => continue,
            };
            let (flow, coherence) = field.at(x as f64 + 0.5, y as f64 + 0.5);
            let theta = if coherence >= 0.2 { snap_to_flow(traced, flow) } else { traced };
            cands.push(Candidate { x, y, kind, theta: wrap_two_pi(theta), quality: coherence, keep: true });
        }
    }

    for (a, junction) in &spurs {
        for c in cands.iter_mut() {
            let at_a = (c.x, c.y) == *a;
            let near_j = c.kind == MinutiaKind::Bifurcation
                && (c.x - junction.0).abs() <= 2
                && (c.y - junction.1).abs() <= 2;
            if at_a || near_j {
                c.keep = false;
            }
        }
    }
    for (a, b) in &short_segments {
        for c in cands.iter_mut() {
            if (c.x, c.y) == *a || (c.x, c.y) == *b {
                c.keep = false;
            }
        }
    }

    if filter.border_margin > 0.0 {
        for c in cands.iter_mut().filter(|c| c.keep) {
            if near_border(field, c.x as f64, c.y as f64, filter.border_margin) {
                c.keep = false;
            }
        }
    }

    if filter.facing_endings > 0.0 {
        let idx: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].keep && cands[i].kind == MinutiaKind::Ending).collect();
        let mut drop = Vec::new();
        for (n, &i) in idx.iter().enumerate() {
            for &j in &idx[n + 1..] {
                let (a, b) = (&cands[i], &cands[j]);
                let d = ((a.x - b.x) as f64).hypot((a.y - b.y) as f64);
                if d >= filter.facing_endings || d == 0.0 {
                    continue;
                }
                // Opposite directions, with the gap on the open side of both.
                let gap = ((b.y - a.y) as f64).atan2((b.x - a.x) as f64);
                if angle_diff(a.theta, b.theta) > 0.75 * PI && angle_diff(gap, a.theta + PI) < 0.25 * PI {
                    drop.push(i);
                    drop.push(j);
                }
            }
        }
        for i in drop {
            cands[i].keep = false;
        }
    }

    let mut kept: Vec<&Candidate> =
        cands.iter().filter(|c| c.keep && c.quality >= filter.min_quality).collect();
    if filter.merge_distance > 0.0 {
        kept.sort_by(|a, b| b.quality.total_cmp(&a.quality).then((a.y, a.x).cmp(&(b.y, b.x))));
        let mut merged: Vec<&Candidate> = Vec::with_capacity(kept.len());
        for c in kept {
            let clear = merged
                .iter()
                .all(|m| ((m.x - c.x) as f64).hypot((m.y - c.y) as f64) >= filter.merge_distance);
            if clear {
                merged.push(c);
            }
        }
        merged.sort_by_key(|c| (c.y, c.x));
        kept = merged;
    }

    Ok(kept
        .into_iter()
        .map(|c| Minutia::new(T::of(c.x as f64), T::of(c.y as f64), T::of(c.theta), c.kind, T::of(c.quality)))
        .collect())
}

/// Picks whichever of `flow` and `flow + pi` lies closer to `traced`.
fn snap_to_flow(traced: f64, flow: f64) -> f64 {
    if angle_diff(traced, flow) <= angle_diff(traced, flow + PI) {
        flow
    } else {
        flow + PI
    }
}

/// Bisector of the two branches that are closest in angle.
fn bifurcation_direction(skel: &RasterImage, x: isize, y: isize) -> f64 {
    let p = ring(skel, x, y);
    // One representative per run of set neighbours, preferring 4-neighbours.
    let mut starts = Vec::new();
    let first_gap = (0..8).find(|&k| !p[k]).unwrap_or(0);
    let mut k = first_gap;
    for _ in 0..8 {
        k = (k + 1) % 8;
        if p[k] && !p[(k + 7) % 8] {
            let mut run = vec![k];
            let mut j = (k + 1) % 8;
            while p[j] && j != k {
                run.push(j);
                j = (j + 1) % 8;
            }
            let rep = run.iter().copied().find(|r| r % 2 == 0).unwrap_or(run[0]);
            starts.push(rep);
        }
    }
    let mut dirs = Vec::with_capacity(starts.len());
    for &s in &starts {
        let mut visited: Vec<(isize, isize)> = vec![(x, y)];
        for (k, o) in OFFSETS.iter().enumerate() {
            if p[k] && k != s {
                visited.push((x + o.0, y + o.1));
            }
        }
        let t = trace(skel, (x + OFFSETS[s].0, y + OFFSETS[s].1), &mut visited, TRACE_LENGTH);
        dirs.push(((t.end.1 - y) as f64).atan2((t.end.0 - x) as f64));
    }
    if dirs.len() < 2 {
        return dirs.first().copied().unwrap_or(0.0);
    }
    let mut best = (f64::INFINITY, 0, 1);
    for i in 0..dirs.len() {
        for j in (i + 1)..dirs.len() {
            let d = angle_diff(dirs[i], dirs[j]);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    let (a, b) = (dirs[best.1], dirs[best.2]);
    (a.sin() + b.sin()).atan2(a.cos() + b.cos())
}

fn near_border(field: &OrientationField, x: f64, y: f64, margin: f64) -> bool {
    let (w, h) = field.image_size();
    if x < margin || y < margin || x > w as f64 - 1.0 - margin || y > h as f64 - 1.0 - margin {
        return true;
    }
    let r = margin.ceil() as i64;
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = (cx + dx, cy + dy);
            if ((px as f64 - x).hypot(py as f64 - y)) < margin && !field.pixel_foreground(px as usize, py as usize) {
                return true;
            }
        }
    }
    false
}
