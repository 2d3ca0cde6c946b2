//! Planar geometry shared by calibration and matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Direction of `other` seen from `self`, in `(-pi, pi]`.
    pub fn bearing_to(&self, other: &Self) -> T {
        (other.y - self.y).atan2(other.x - self.x)
    }

    pub fn cast<U: Real>(self) -> Point2<U> {
        Point2 { x: U::of(self.x.as_f64()), y: U::of(self.y.as_f64()) }
    }
}

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_pi<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a % two_pi;
    if r > T::PI() {
        r = r - two_pi;
    } else if r <= -T::PI() {
        r = r + two_pi;
    }
    r
}

/// Wraps an angle into `[0, 2pi)`.
#[inline]
pub fn wrap_two_pi<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a % two_pi;
    if r < T::zero() {
        r = r + two_pi;
    }
    // `-tiny + 2pi` can round to exactly 2pi.
    if r >= two_pi {
        r = T::zero();
    }
    r
}

/// Absolute angular difference in `[0, pi]`.
#[inline]
pub fn angle_diff<T: Real>(a: T, b: T) -> T {
    wrap_pi(a - b).abs()
}

/// Projective 3x3 transform, normalized so that `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 9]", into = "[T; 9]")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Homography<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Homography<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Homography { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    /// Normalizes and validates a raw matrix.
    pub fn from_matrix(m: [[T; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        let scale = m.iter().flatten().fold(T::zero(), |acc, v| acc.max(v.abs()));
        if !s.is_finite() || s.abs() <= scale * T::epsilon() {
            return Err(Error::DegenerateGeometry("m[2][2] is zero; cannot normalize".into()));
        }
        let mut n = m;
        for row in n.iter_mut() {
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        n[2][2] = T::one();
        let h = Homography { m: n };
        if !(h.determinant().abs() > T::of(1e-12)) {
            return Err(Error::DegenerateGeometry("matrix is singular".into()));
        }
        Ok(h)
    }

    pub fn translation(dx: T, dy: T) -> Self {
        let mut h = Self::identity();
        h.m[0][2] = dx;
        h.m[1][2] = dy;
        h
    }

    pub fn matrix(&self) -> [[T; 3]; 3] {
        self.m
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Maps a point; returns `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, p: Point2<T>) -> Option<Point2<T>> {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w == T::zero() || !w.is_finite() {
            return None;
        }
        Some(Point2 {
            x: (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            y: (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let det = self.determinant();
        if det.abs() <= T::of(1e-12) {
            return Err(Error::DegenerateGeometry("matrix is singular".into()));
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_matrix(adj)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        Self::from_matrix(mat3_mul(&self.m, &first.m))
    }
}

impl<T: Real> TryFrom<[T; 9]> for Homography<T> {
    type Error = Error;

    fn try_from(v: [T; 9]) -> Result<Self> {
        Homography::from_matrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

impl<T: Real> From<Homography<T>> for [T; 9] {
    fn from(h: Homography<T>) -> Self {
        let m = h.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }
}

pub(crate) fn mat3_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// rows.
pub(crate) fn symmetric_eigen<T: Real, const N: usize>(a: [[T; N]; N]) -> ([T; N], [[T; N]; N]) {
    let mut a = a;
    let mut v = [[T::zero(); N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..N {
            for j in (i + 1)..N {
                off = off + a[i][j] * a[i][j];
            }
        }
        if off <= T::min_positive_value() {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::of(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = std::array::from_fn(|k| a[order[k]][order[k]]);
    let vectors = std::array::from_fn(|k| std::array::from_fn(|r| v[r][order[k]]));
    (values, vectors)
}
