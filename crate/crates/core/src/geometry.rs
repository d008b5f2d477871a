//! Small planar geometry toolkit shared by the codec, vectorizer, metrics and
//! rollout code. Everything is in `f64` meters unless a function says
//! otherwise.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// A point or vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n > 1e-12 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotated by +90 degrees (counter-clockwise).
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = (theta + PI).rem_euclid(TAU) - PI;
    if a >= PI {
        a -= TAU;
    }
    a
}

/// Distance from `p` to the segment `a`-`b`, plus the clamped segment parameter.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq > 0.0 {
        ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a + ab * t).distance(p), t)
}

/// Total arc length of a polyline.
pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Cumulative arc length at each vertex.
pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += points[i - 1].distance(*p);
        }
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along the polyline (clamped to its ends).
pub fn point_at_arc_length(points: &[Vec2], cum: &[f64], s: f64) -> Vec2 {
    debug_assert_eq!(points.len(), cum.len());
    if points.is_empty() {
        return Vec2::ZERO;
    }
    if s <= 0.0 {
        return points[0];
    }
    let total = *cum.last().unwrap();
    if s >= total {
        return *points.last().unwrap();
    }
    let i = cum.partition_point(|&c| c <= s).max(1) - 1;
    let seg = cum[i + 1] - cum[i];
    if seg <= 0.0 {
        return points[i];
    }
    points[i].lerp(points[i + 1], (s - cum[i]) / seg)
}

/// Resamples a polyline at a fixed arc-length spacing. Both endpoints are
/// kept exactly; the final interval may be shorter than `spacing`.
pub fn resample_polyline(points: &[Vec2], spacing: f64) -> Vec<Vec2> {
    if points.len() < 2 || spacing <= 0.0 {
        return points.to_vec();
    }
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap();
    let mut out = vec![points[0]];
    let mut k = 1usize;
    loop {
        let s = k as f64 * spacing;
        if s >= total - 1e-9 {
            break;
        }
        out.push(point_at_arc_length(points, &cum, s));
        k += 1;
    }
    let last = *points.last().unwrap();
    if last.distance(*out.last().unwrap()) > 1e-9 {
        out.push(last);
    }
    out
}

/// Moving-average smoothing with a half window of `radius` points. Endpoints
/// are pinned.
pub fn smooth_polyline(points: &[Vec2], radius: usize) -> Vec<Vec2> {
    let n = points.len();
    if n < 3 || radius == 0 {
        return points.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i == 0 || i == n - 1 {
            out.push(points[i]);
            continue;
        }
        // shrink the window near the ends so it stays symmetric
        let r = radius.min(i).min(n - 1 - i);
        let mut acc = Vec2::ZERO;
        for p in &points[i - r..=i + r] {
            acc += *p;
        }
        out.push(acc / (2 * r + 1) as f64);
    }
    out
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub distance: f64,
    pub arc_length: f64,
    pub point: Vec2,
    /// Unit tangent of the segment containing the projection.
    pub tangent: Vec2,
}

/// Closest point on a polyline with at least two vertices.
pub fn project_onto_polyline(points: &[Vec2], p: Vec2) -> Option<Projection> {
    if points.len() < 2 {
        return None;
    }
    let mut best: Option<Projection> = None;
    let mut acc = 0.0;
    for w in points.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len <= 0.0 {
            continue;
        }
        let (d, t) = point_segment_distance(p, w[0], w[1]);
        if best.is_none_or(|b| d < b.distance) {
            best = Some(Projection {
                distance: d,
                arc_length: acc + t * len,
                point: w[0] + seg * t,
                tangent: seg / len,
            });
        }
        acc += len;
    }
    best
}
