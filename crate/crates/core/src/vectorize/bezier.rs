//! Cubic Bézier fitting for intersection connectors.
//!
//! The end points are pinned to the path ends and the inner control points
//! slide along fixed end tangents, so the fit is a two-unknown linear least
//! squares problem. Parameters start at normalized chord length and are
//! refined by Newton projection of each sample onto the current curve.

use std::collections::HashSet;

use crate::geometry::{cumulative_lengths, Vec2};
use crate::raster::{for_each_stroke_pixel, RasterGeometry};

/// Number of curve samples used for the curvature maximum.
const CURVATURE_SAMPLES: usize = 256;
const REPARAM_ROUNDS: usize = 4;
const REFINE_ITERS: usize = 40;
const MIN_HANDLE_FRACTION: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicBezier {
    pub p: [Vec2; 4],
}

impl CubicBezier {
    pub fn new(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2) -> Self {
        Self { p: [p0, p1, p2, p3] }
    }

    pub fn point(&self, t: f64) -> Vec2 {
        let [b0, b1, b2, b3] = bernstein(t);
        self.p[0] * b0 + self.p[1] * b1 + self.p[2] * b2 + self.p[3] * b3
    }

    pub fn d1(&self, t: f64) -> Vec2 {
        let s = 1.0 - t;
        (self.p[1] - self.p[0]) * (3.0 * s * s)
            + (self.p[2] - self.p[1]) * (6.0 * s * t)
            + (self.p[3] - self.p[2]) * (3.0 * t * t)
    }

    pub fn d2(&self, t: f64) -> Vec2 {
        let a = self.p[2] - self.p[1] * 2.0 + self.p[0];
        let b = self.p[3] - self.p[2] * 2.0 + self.p[1];
        a * (6.0 * (1.0 - t)) + b * (6.0 * t)
    }

    /// Unsigned curvature at `t`; infinite where the speed vanishes.
    pub fn curvature(&self, t: f64) -> f64 {
        let d1 = self.d1(t);
        let speed = d1.norm();
        if speed < 1e-12 {
            return f64::INFINITY;
        }
        d1.cross(self.d2(t)).abs() / (speed * speed * speed)
    }

    pub fn max_curvature(&self) -> f64 {
        (0..=CURVATURE_SAMPLES)
            .map(|i| self.curvature(i as f64 / CURVATURE_SAMPLES as f64))
            .fold(0.0, f64::max)
    }

    /// `n + 1` points at uniform parameter steps.
    pub fn sample(&self, n: usize) -> Vec<Vec2> {
        let n = n.max(1);
        (0..=n).map(|i| self.point(i as f64 / n as f64)).collect()
    }

    /// Dense polyline whose consecutive points are at most `max_step` apart.
    pub fn polyline(&self, max_step: f64) -> Vec<Vec2> {
        let hull = self.p[0].distance(self.p[1]) + self.p[1].distance(self.p[2]) + self.p[2].distance(self.p[3]);
        let n = ((hull / max_step).ceil() as usize).clamp(8, 100_000);
        self.sample(n)
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.p[3], self.p[2], self.p[1], self.p[0])
    }
}

#[inline]
fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

/// Unit tangents at both ends of a polyline from local quadratic fits over
/// the first and last `reach` of arc length (at most half the length).
pub fn end_tangents(points: &[Vec2], reach: f64) -> Option<(Vec2, Vec2)> {
    if points.len() < 2 {
        return None;
    }
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return None;
    }
    let r = reach.min(0.5 * total).max(1e-9);
    let start = local_tangent(points.iter().copied().zip(cum.iter().copied()), r)?;
    let end = -local_tangent(points.iter().rev().copied().zip(cum.iter().rev().map(|c| total - c)), r)?;
    Some((start, end))
}

/// Derivative at `s = 0` of a least-squares quadratic `p(s)` through the
/// points with arc length `s <= reach`; falls back to the chord when fewer
/// than four points are in reach.
fn local_tangent(pts: impl Iterator<Item = (Vec2, f64)>, reach: f64) -> Option<Vec2> {
    let near: Vec<(Vec2, f64)> = pts.take_while(|&(_, s)| s <= reach + 1e-9).collect();
    let chord = || (near.last()?.0 - near.first()?.0).normalized();
    if near.len() < 4 {
        return chord();
    }
    // normal equations for [1, s, s^2], with s scaled to [0, 1]
    let scale = near.last().unwrap().1.max(1e-12);
    let mut m = [[0.0f64; 3]; 3];
    let mut bx = [0.0f64; 3];
    let mut by = [0.0f64; 3];
    for &(p, s) in &near {
        let u = s / scale;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            bx[i] += basis[i] * p.x;
            by[i] += basis[i] * p.y;
        }
    }
    match (solve3(m, bx), solve3(m, by)) {
        (Some(cx), Some(cy)) => Vec2::new(cx[1], cy[1]).normalized().or_else(chord),
        _ => chord(),
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..3 {
                    m[row][k] -= f * m[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some([b[0] / m[0][0], b[1] / m[1][1], b[2] / m[2][2]])
}

/// End tangents of the least-squares cubic with pinned ends and free inner
/// control points, on chord-length parameters.
pub fn free_fit_tangents(points: &[Vec2]) -> Option<(Vec2, Vec2)> {
    if points.len() < 4 {
        return None;
    }
    let p0 = points[0];
    let p3 = *points.last().unwrap();
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap();
    if total <= 1e-9 {
        return None;
    }
    // 2x2 system shared by both coordinates
    let (mut c11, mut c12, mut c22) = (0.0, 0.0, 0.0);
    let (mut r1, mut r2) = (Vec2::ZERO, Vec2::ZERO);
    for (q, c) in points.iter().zip(&cum) {
        let [b0, b1, b2, b3] = bernstein(c / total);
        let r = *q - p0 * b0 - p3 * b3;
        c11 += b1 * b1;
        c12 += b1 * b2;
        c22 += b2 * b2;
        r1 += r * b1;
        r2 += r * b2;
    }
    let det = c11 * c22 - c12 * c12;
    if det.abs() < 1e-12 {
        return None;
    }
    let p1 = (r1 * c22 - r2 * c12) * (1.0 / det);
    let p2 = (r2 * c11 - r1 * c12) * (1.0 / det);
    Some(((p1 - p0).normalized()?, (p3 - p2).normalized()?))
}

/// Least-squares cubic through `points` with pinned ends and inner control
/// points on the given end tangents (estimated from the points when `None`).
pub fn fit_cubic(points: &[Vec2], tangents: Option<(Vec2, Vec2)>) -> Option<CubicBezier> {
    if points.len() < 2 {
        return None;
    }
    let p0 = points[0];
    let p3 = *points.last().unwrap();
    let chord = p0.distance(p3);
    let total: f64 = points.windows(2).map(|w| w[0].distance(w[1])).sum();
    if total <= 1e-9 {
        return None;
    }
    let (t0, t3) = match tangents {
        Some(t) => t,
        None => end_tangents(points, 0.15 * total)?,
    };

    let cum = cumulative_lengths(points);
    let mut u: Vec<f64> = cum.iter().map(|c| c / total).collect();
    let fallback = (chord / 3.0).max(0.05 * total);
    // least squares on a nearly straight path happily shrinks the handles
    // to nothing, leaving a cusp at each end
    let min_handle = MIN_HANDLE_FRACTION * chord;
    let mut curve = CubicBezier::new(p0, p0 + t0 * fallback, p3 - t3 * fallback, p3);

    for round in 0..=REPARAM_ROUNDS {
        let (mut aa, mut ab, mut bb, mut ar, mut br) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (q, &t) in points.iter().zip(&u) {
            let [b0, b1, b2, b3] = bernstein(t);
            let av = t0 * b1;
            let bv = t3 * (-b2);
            let r = *q - p0 * (b0 + b1) - p3 * (b2 + b3);
            aa += av.dot(av);
            ab += av.dot(bv);
            bb += bv.dot(bv);
            ar += av.dot(r);
            br += bv.dot(r);
        }
        let det = aa * bb - ab * ab;
        let (mut a, mut b) = if det.abs() > 1e-12 * (aa * bb).max(1e-300) {
            ((ar * bb - br * ab) / det, (aa * br - ab * ar) / det)
        } else {
            (fallback, fallback)
        };
        // a handle pointing backwards or beyond the path length is a bad fit
        // of a nearly degenerate configuration; fall back to thirds
        let limit = total;
        if !(a > 1e-6 && a <= limit) || !(b > 1e-6 && b <= limit) {
            a = fallback;
            b = fallback;
        }
        a = a.max(min_handle);
        b = b.max(min_handle);
        curve = CubicBezier::new(p0, p0 + t0 * a, p3 - t3 * b, p3);
        if round == REPARAM_ROUNDS {
            break;
        }
        // Newton projection of each sample onto the curve
        let last = u.len() - 1;
        for (k, t) in u.iter_mut().enumerate() {
            if k == 0 || k == last {
                continue;
            }
            let q = points[k];
            for _ in 0..2 {
                let diff = curve.point(*t) - q;
                let d1 = curve.d1(*t);
                let num = diff.dot(d1);
                let den = d1.dot(d1) + diff.dot(curve.d2(*t));
                if den.abs() < 1e-12 {
                    break;
                }
                *t = (*t - num / den).clamp(0.0, 1.0);
            }
        }
    }
    let a = (curve.p[1] - p0).dot(t0);
    let b = (p3 - curve.p[2]).dot(t3);
    let (a, b) = refine_handles(points, &mut u, p0, p3, t0, t3, a, b, min_handle);
    if a > 1e-6 && a <= total && b > 1e-6 && b <= total {
        curve = CubicBezier::new(p0, p0 + t0 * a, p3 - t3 * b, p3);
    }
    Some(curve)
}

/// Levenberg-Marquardt on the handle lengths and the sample parameters
/// together. The per-sample parameters are eliminated through the Schur
/// complement, leaving a 2x2 solve per iteration.
#[allow(clippy::too_many_arguments)]
fn refine_handles(
    points: &[Vec2],
    u: &mut [f64],
    p0: Vec2,
    p3: Vec2,
    t0: Vec2,
    t3: Vec2,
    mut a: f64,
    mut b: f64,
    min_handle: f64,
) -> (f64, f64) {
    let curve_of = |a: f64, b: f64| CubicBezier::new(p0, p0 + t0 * a, p3 - t3 * b, p3);
    let cost = |c: &CubicBezier, u: &[f64]| -> f64 { points.iter().zip(u).map(|(q, &t)| (c.point(t) - *q).norm_sq()).sum() };
    let last = u.len() - 1;
    let mut lambda = 1e-3;
    let mut cur = cost(&curve_of(a, b), u);
    let mut trial = u.to_vec();
    for _ in 0..REFINE_ITERS {
        if cur < 1e-24 {
            break;
        }
        let c = curve_of(a, b);
        let (mut haa, mut hab, mut hbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        // per-sample (C_a, C_b, d, g_t)
        let mut per = Vec::with_capacity(u.len());
        for (k, (q, &t)) in points.iter().zip(u.iter()).enumerate() {
            let [_, b1, b2, _] = bernstein(t);
            let ca = t0 * b1;
            let cb = t3 * (-b2);
            let r = c.point(t) - *q;
            haa += ca.dot(ca);
            hab += ca.dot(cb);
            hbb += cb.dot(cb);
            ga += ca.dot(r);
            gb += cb.dot(r);
            if k == 0 || k == last {
                per.push((0.0, 0.0, 1.0, 0.0));
            } else {
                let e = c.d1(t);
                per.push((ca.dot(e), cb.dot(e), e.dot(e), e.dot(r)));
            }
        }
        loop {
            let (mut saa, mut sab, mut sbb) = (haa * (1.0 + lambda), hab, hbb * (1.0 + lambda));
            let (mut ra, mut rb) = (ga, gb);
            for &(xa, xb, d, gt) in &per {
                let d = d * (1.0 + lambda) + 1e-12;
                saa -= xa * xa / d;
                sab -= xa * xb / d;
                sbb -= xb * xb / d;
                ra -= xa * gt / d;
                rb -= xb * gt / d;
            }
            let det = saa * sbb - sab * sab;
            if det.abs() < 1e-300 {
                return (a, b);
            }
            let da = (a - (ra * sbb - rb * sab) / det).max(min_handle) - a;
            let db = (b - (saa * rb - sab * ra) / det).max(min_handle) - b;
            for (k, &(xa, xb, d, gt)) in per.iter().enumerate() {
                let d = d * (1.0 + lambda) + 1e-12;
                trial[k] = if k == 0 || k == last {
                    u[k]
                } else {
                    (u[k] - (gt + xa * da + xb * db) / d).clamp(0.0, 1.0)
                };
            }
            let next = cost(&curve_of(a + da, b + db), &trial);
            if next < cur {
                a += da;
                b += db;
                u.copy_from_slice(&trial);
                cur = next;
                lambda = (lambda * 0.3).max(1e-12);
                break;
            }
            lambda *= 10.0;
            if lambda > 1e8 {
                return (a, b);
            }
        }
    }
    (a, b)
}

/// Pixels covered by a stroke of width `stroke` along a polyline given in
/// continuous pixel coordinates.
pub fn stroke_pixels(points_px: &[Vec2], stroke: f64, width: usize, height: usize) -> HashSet<(usize, usize)> {
    let mut out = HashSet::new();
    if points_px.len() == 1 {
        for_each_stroke_pixel(points_px[0], points_px[0], stroke, width, height, |c, r| {
            out.insert((c, r));
        });
    }
    for w in points_px.windows(2) {
        for_each_stroke_pixel(w[0], w[1], stroke, width, height, |c, r| {
            out.insert((c, r));
        });
    }
    out
}

/// Intersection over union of two world polylines after stroke
/// rasterization on the given raster.
pub fn raster_iou(a: &[Vec2], b: &[Vec2], geometry: &RasterGeometry, stroke: f64) -> f64 {
    let to_px = |pts: &[Vec2]| pts.iter().map(|p| geometry.world_to_pixel(*p)).collect::<Vec<_>>();
    let sa = stroke_pixels(&to_px(a), stroke, geometry.width, geometry.height);
    let sb = stroke_pixels(&to_px(b), stroke, geometry.width, geometry.height);
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// A fitted connector together with its gate measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierFit {
    pub curve: CubicBezier,
    /// Stroke-rasterized IoU against the source path.
    pub iou: f64,
    /// Maximum curvature in 1/m.
    pub max_curvature: f64,
}

impl BezierFit {
    pub fn control_points(&self) -> [Vec2; 4] {
        self.curve.p
    }

    pub fn accepted(&self, min_iou: f64, k_thresh: f64) -> bool {
        self.iou >= min_iou && self.max_curvature <= k_thresh
    }
}

/// Fits a cubic to a world-coordinate path and measures both gates.
pub fn fit_and_score(
    path: &[Vec2],
    tangents: Option<(Vec2, Vec2)>,
    geometry: &RasterGeometry,
    stroke: f64,
) -> Option<BezierFit> {
    let curve = fit_cubic(path, tangents)?;
    let dense = curve.polyline(0.25 * geometry.meters_per_pixel);
    Some(BezierFit {
        curve,
        iou: raster_iou(&dense, path, geometry, stroke),
        max_curvature: curve.max_curvature(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn arc(center: Vec2, r: f64, a0: f64, a1: f64, step: f64) -> Vec<Vec2> {
        let n = ((r * (a1 - a0).abs()) / step).ceil() as usize;
        (0..=n)
            .map(|i| {
                let a = a0 + (a1 - a0) * i as f64 / n as f64;
                center + Vec2::new(a.cos(), a.sin()) * r
            })
            .collect()
    }

    fn grid() -> RasterGeometry {
        RasterGeometry::centered(256, 256, 0.3125)
    }

    #[test]
    fn straight_path_fits_exactly() {
        let path: Vec<Vec2> = (0..=40).map(|i| Vec2::new(-10.0 + 0.5 * i as f64, 3.0)).collect();
        let fit = fit_and_score(&path, None, &grid(), 3.0).unwrap();
        for t in [0.0, 0.3, 0.7, 1.0] {
            assert!((fit.curve.point(t).y - 3.0).abs() < 1e-9);
        }
        assert!(fit.max_curvature < 1e-9);
        assert!(fit.iou >= 0.95, "{}", fit.iou);
        assert!(fit.accepted(0.5, 0.2));
    }

    #[test]
    fn quarter_arc_radius_8_is_accepted() {
        let path = arc(Vec2::new(0.0, 0.0), 8.0, -PI / 2.0, 0.0, 0.1);
        let fit = fit_and_score(&path, None, &grid(), 3.0).unwrap();
        // a cubic arc approximation oscillates a few percent around 1/r
        assert!((fit.max_curvature - 0.125).abs() < 0.02, "{}", fit.max_curvature);
        assert!(fit.iou > 0.9);
        assert!(fit.accepted(0.5, 0.2));
    }

    #[test]
    fn u_turn_radius_2_is_rejected() {
        let path = arc(Vec2::new(0.0, 0.0), 2.0, -PI / 2.0, PI / 2.0, 0.05);
        let fit = fit_and_score(&path, None, &grid(), 3.0).unwrap();
        assert!(fit.max_curvature >= 0.5, "{}", fit.max_curvature);
        assert!(!fit.accepted(0.5, 0.2));
    }

    #[test]
    fn curvature_of_known_cubic() {
        // y = x^3-like cubic; closed form at t = 0: |d1 x d2| / |d1|^3
        let c = CubicBezier::new(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(3.0, 3.0),
        );
        let d1 = Vec2::new(3.0, 0.0);
        let d2 = Vec2::new(0.0, 6.0);
        assert!((c.curvature(0.0) - d1.cross(d2).abs() / 27.0).abs() < 1e-12);
        assert_eq!(c.d1(0.0), d1);
        assert_eq!(c.d2(0.0), d2);
    }

    #[test]
    fn fitting_recovers_a_cubic() {
        let truth = CubicBezier::new(
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(8.0, 2.0),
            Vec2::new(10.0, 8.0),
        );
        let pts = truth.sample(200);
        let t0 = (truth.p[1] - truth.p[0]).normalized().unwrap();
        let t3 = (truth.p[3] - truth.p[2]).normalized().unwrap();
        let fit = fit_cubic(&pts, Some((t0, t3))).unwrap();
        for k in 0..4 {
            assert!(fit.p[k].distance(truth.p[k]) < 1e-3, "{k}: {:?}", fit.p[k]);
        }
    }

    #[test]
    fn acceptance_is_monotone_in_k_thresh() {
        for r in [3.0, 5.0, 8.0, 20.0] {
            let path = arc(Vec2::ZERO, r, 0.0, PI / 2.0, 0.1);
            let fit = fit_and_score(&path, None, &grid(), 3.0).unwrap();
            let mut was = false;
            for k in [0.05, 0.1, 0.2, 0.3, 0.5, 1.0] {
                let now = fit.accepted(0.5, k);
                assert!(!was || now);
                was = now;
            }
        }
    }
}
