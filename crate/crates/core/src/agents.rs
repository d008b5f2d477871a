//! Decoding of agent initial states from the agent channel: connected
//! components, a minimum-area oriented rectangle per component, speed from
//! the mean channel value, heading from the rectangle's long axis.

use crate::geometry::{wrap_angle, Vec2};
use crate::raster::{decode_direction, decode_speed, FeatureMap};
use crate::scenario::{Agent, AgentState, DEFAULT_V_MAX, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    /// Channel-3 values above this count as agent pixels.
    pub presence: f32,
    /// Components with fewer pixels are discarded.
    pub min_area: usize,
    /// Components whose rectangle fill ratio is below this are split in two.
    pub min_fill: f64,
    pub v_max: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            presence: 0.25,
            min_area: 6,
            min_fill: 0.6,
            v_max: DEFAULT_V_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDetection {
    pub center: Waypoint,
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub speed: f64,
    pub pixel_count: usize,
    /// False when no lane direction was close enough to pick between the
    /// two opposite headings of the rectangle.
    pub heading_from_lane: bool,
}

impl AgentDetection {
    pub fn to_agent(&self) -> Agent {
        Agent::new(
            self.length,
            self.width,
            AgentState::new(self.center.x, self.center.y, self.heading, self.speed),
        )
    }
}

/// Minimum-area rectangle enclosing a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Unit vector along the first side.
    pub axis: Vec2,
    /// Extent along `axis`.
    pub extent_u: f64,
    /// Extent along `axis.perp()`.
    pub extent_v: f64,
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        self.extent_u * self.extent_v
    }
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, no collinear
/// points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && (lower[lower.len() - 1] - lower[lower.len() - 2]).cross(p - lower[lower.len() - 2]) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && (upper[upper.len() - 1] - upper[upper.len() - 2]).cross(p - upper[upper.len() - 2]) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle; one side is collinear with a hull edge
/// (rotating-calipers argument), so every hull edge direction is tried.
pub fn min_area_rect(points: &[Vec2]) -> Option<OrientedRect> {
    let hull = convex_hull(points);
    match hull.len() {
        0 => return None,
        1 => {
            return Some(OrientedRect {
                center: hull[0],
                axis: Vec2::new(1.0, 0.0),
                extent_u: 0.0,
                extent_v: 0.0,
            })
        }
        _ => {}
    }
    let mut best: Option<OrientedRect> = None;
    for i in 0..hull.len() {
        let Some(axis) = (hull[(i + 1) % hull.len()] - hull[i]).normalized() else {
            continue;
        };
        let side = axis.perp();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = p.dot(axis);
            let v = p.dot(side);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let rect = OrientedRect {
            center: axis * (0.5 * (u0 + u1)) + side * (0.5 * (v0 + v1)),
            axis,
            extent_u: u1 - u0,
            extent_v: v1 - v0,
        };
        // ties keep the first edge so the result is order-stable
        if best.is_none_or(|b| rect.area() < b.area() - 1e-12) {
            best = Some(rect);
        }
    }
    best
}

/// 8-connected components of pixels above `threshold` in one channel, in
/// raster order of their first pixel.
pub fn connected_components(fm: &FeatureMap, channel: usize, threshold: f32) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (fm.width(), fm.height());
    let plane = fm.plane(channel);
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if label[start] || plane[start] <= threshold {
            continue;
        }
        label[start] = true;
        let mut comp = vec![(start % w, start / w)];
        let mut k = 0;
        while k < comp.len() {
            let (c, r) = comp[k];
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nc, nr) = (c as isize + dc, r as isize + dr);
                    if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                        continue;
                    }
                    let i = nr as usize * w + nc as usize;
                    if !label[i] && plane[i] > threshold {
                        label[i] = true;
                        comp.push((nc as usize, nr as usize));
                    }
                }
            }
            k += 1;
        }
        out.push(comp);
    }
    out
}

/// Splits a pixel set in two with Lloyd iterations seeded at the extremes of
/// its long axis.
fn two_means(points: &[Vec2], axis: Vec2) -> (Vec<usize>, Vec<usize>) {
    let proj = |p: &Vec2| p.dot(axis);
    let lo = points.iter().copied().min_by(|a, b| proj(a).total_cmp(&proj(b))).unwrap();
    let hi = points.iter().copied().max_by(|a, b| proj(a).total_cmp(&proj(b))).unwrap();
    let mut c = [lo, hi];
    let mut assign = vec![0usize; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let k = usize::from(p.distance(c[1]) < p.distance(c[0]));
            if assign[i] != k {
                assign[i] = k;
                changed = true;
            }
        }
        let mut sum = [Vec2::ZERO; 2];
        let mut n = [0usize; 2];
        for (p, &k) in points.iter().zip(&assign) {
            sum[k] += *p;
            n[k] += 1;
        }
        for k in 0..2 {
            if n[k] > 0 {
                c[k] = sum[k] / n[k] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let a = (0..points.len()).filter(|&i| assign[i] == 0).collect();
    let b = (0..points.len()).filter(|&i| assign[i] == 1).collect();
    (a, b)
}

/// Direction of nearby lane pixels, weighted towards the closest.
fn lane_direction_near(fm: &FeatureMap, center: Vec2, radius_m: f64) -> Option<Vec2> {
    let g = fm.geometry();
    let c = g.world_to_pixel(center);
    let rad = (radius_m / g.meters_per_pixel).ceil() as isize;
    let (w, h) = (g.width as isize, g.height as isize);
    let (cc, cr) = (c.x.round() as isize, c.y.round() as isize);
    let mut acc = Vec2::ZERO;
    for r in (cr - rad).max(0)..=(cr + rad).min(h - 1) {
        for col in (cc - rad).max(0)..=(cc + rad).min(w - 1) {
            let d = Vec2::new(col as f64 - c.x, r as f64 - c.y).norm();
            if d > rad as f64 {
                continue;
            }
            if let Some(dir) = decode_direction(fm, col as usize, r as usize) {
                acc += dir / (1.0 + d);
            }
        }
    }
    acc.normalized()
}

fn detect(fm: &FeatureMap, pixels: &[(usize, usize)], cfg: &AgentConfig, depth: usize, out: &mut Vec<AgentDetection>) {
    if pixels.len() < cfg.min_area {
        return;
    }
    let g = fm.geometry();
    let mpp = g.meters_per_pixel;
    let pts: Vec<Vec2> = pixels.iter().map(|&(c, r)| g.pixel_center(c, r)).collect();
    let Some(rect) = min_area_rect(&pts) else {
        return;
    };
    // pixel centers span one pixel less than the covered area
    let (mut axis, mut length, mut width) = (rect.axis, rect.extent_u + mpp, rect.extent_v + mpp);
    if width > length {
        axis = axis.perp();
        std::mem::swap(&mut length, &mut width);
    }
    let fill = pixels.len() as f64 * mpp * mpp / (length * width);
    if fill < cfg.min_fill && depth < 3 && pixels.len() >= 2 * cfg.min_area {
        let (a, b) = two_means(&pts, axis);
        if a.len() >= cfg.min_area && b.len() >= cfg.min_area {
            let part = |idx: Vec<usize>| idx.into_iter().map(|i| pixels[i]).collect::<Vec<_>>();
            detect(fm, &part(a), cfg, depth + 1, out);
            detect(fm, &part(b), cfg, depth + 1, out);
            return;
        }
    }
    let mean = pixels.iter().map(|&(c, r)| fm.get(2, c, r) as f64).sum::<f64>() / pixels.len() as f64;
    let speed = decode_speed(mean, cfg.v_max);

    let lane = lane_direction_near(fm, rect.center, 0.75 * length);
    let (heading, heading_from_lane) = match lane {
        Some(d) if d.dot(axis).abs() >= 0.3 => {
            let a = if d.dot(axis) >= 0.0 { axis } else { -axis };
            (a.angle(), true)
        }
        // fold onto [-pi/2, pi/2)
        _ => {
            let a = axis.angle();
            let folded = if !(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&a) {
                wrap_angle(a + std::f64::consts::PI)
            } else {
                a
            };
            (folded, false)
        }
    };
    out.push(AgentDetection {
        center: rect.center,
        heading: wrap_angle(heading),
        length,
        width,
        speed,
        pixel_count: pixels.len(),
        heading_from_lane,
    });
}

/// Decodes all agents from the agent channel.
pub fn extract_agents(fm: &FeatureMap, cfg: &AgentConfig) -> Vec<AgentDetection> {
    let mut out = Vec::new();
    for comp in connected_components(fm, 2, cfg.presence) {
        detect(fm, &comp, cfg, 0, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{load_png, rasterize, render_png};
    use crate::scenario::{Centerline, Scenario};
    use std::f64::consts::PI;

    fn scene(agents: Vec<Agent>, lanes: Vec<Centerline>) -> Scenario {
        Scenario::new(lanes, agents, 80.0, 30.0).unwrap()
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    #[test]
    fn single_box_round_trip() {
        let s = scene(vec![Agent::new(5.0, 2.0, AgentState::new(3.0, -7.0, 0.0, 15.0))], vec![]);
        let fm = rasterize(&s, 256, 256, 3).unwrap();
        let det = extract_agents(&fm, &AgentConfig::default());
        assert_eq!(det.len(), 1);
        let d = &det[0];
        assert!((d.speed - 15.0).abs() <= 0.5);
        assert!(angle_diff(d.heading, 0.0) <= 5f64.to_radians());
        let mpp = fm.meters_per_pixel();
        assert!(d.center.distance(Vec2::new(3.0, -7.0)) <= 1.5 * mpp);
        assert!((d.length - 5.0).abs() <= 2.0 * mpp);
        assert!((d.width - 2.0).abs() <= 2.0 * mpp);
    }

    #[test]
    fn empty_channel_gives_nothing() {
        let s = scene(vec![], vec![]);
        let fm = rasterize(&s, 64, 64, 3).unwrap();
        assert!(extract_agents(&fm, &AgentConfig::default()).is_empty());
    }

    #[test]
    fn two_disjoint_boxes() {
        let s = scene(
            vec![
                Agent::new(4.5, 1.9, AgentState::new(-10.0, 0.0, 0.3, 5.0)),
                Agent::new(4.5, 1.9, AgentState::new(10.0, 5.0, -1.2, 25.0)),
            ],
            vec![],
        );
        let fm = rasterize(&s, 256, 256, 3).unwrap();
        assert_eq!(extract_agents(&fm, &AgentConfig::default()).len(), 2);
    }

    #[test]
    fn heading_follows_lane_direction() {
        let lane = Centerline::new(vec![Vec2::new(30.0, 10.0), Vec2::new(-30.0, -10.0)]).unwrap();
        let dir = (lane.last() - lane.first()).angle();
        let s = scene(vec![Agent::new(5.0, 2.0, AgentState::new(0.0, 0.0, dir, 10.0))], vec![lane]);
        let fm = rasterize(&s, 256, 256, 3).unwrap();
        let det = extract_agents(&fm, &AgentConfig::default());
        assert_eq!(det.len(), 1);
        assert!(det[0].heading_from_lane);
        assert!(angle_diff(det[0].heading, dir) <= 5f64.to_radians());
    }

    #[test]
    fn rotated_boxes_position_and_size() {
        let mpp = 0.3125;
        for k in 0..24 {
            let heading = -PI + k as f64 * PI / 12.0 + 0.05;
            let (x, y) = (5.3 * (k as f64).sin(), 4.1 * (k as f64).cos());
            let s = scene(vec![Agent::new(4.8, 2.0, AgentState::new(x, y, heading, 12.0))], vec![]);
            let fm = rasterize(&s, 256, 256, 3).unwrap();
            let det = extract_agents(&fm, &AgentConfig::default());
            assert_eq!(det.len(), 1);
            let d = &det[0];
            assert!(d.center.distance(Vec2::new(x, y)) <= 1.5 * mpp, "k={k}");
            assert!((d.length - 4.8).abs() <= 2.0 * mpp, "k={k}: {}", d.length);
            assert!((d.width - 2.0).abs() <= 2.0 * mpp, "k={k}: {}", d.width);
            // axis agrees up to the 180 degree ambiguity
            let e = angle_diff(d.heading, heading).min(angle_diff(d.heading, heading + PI));
            assert!(e <= 8f64.to_radians(), "k={k}: {e}");
        }
    }

    #[test]
    fn png_quantized_speed_error_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        for k in 0..=30 {
            let v = k as f64;
            let s = scene(vec![Agent::new(5.0, 2.0, AgentState::new(0.0, 0.0, 0.0, v))], vec![]);
            let fm = rasterize(&s, 64, 64, 3).unwrap();
            render_png(&fm, &path).unwrap();
            let back = load_png(&path, fm.meters_per_pixel()).unwrap();
            let det = extract_agents(&back, &AgentConfig::default());
            assert_eq!(det.len(), 1);
            // v = 0 encodes to 0.5, exactly half a byte step; allow for f32 storage
            assert!((det[0].speed - v).abs() <= 30.0 / 255.0 + 1e-5, "v={v}: {}", det[0].speed);
            let exact = extract_agents(&fm, &AgentConfig::default());
            assert!((exact[0].speed - v).abs() <= 1e-5);
        }
    }

    #[test]
    fn touching_boxes_are_split() {
        // two cars nose to tail at an angle form an L-shaped blob
        let s = scene(
            vec![
                Agent::new(5.0, 2.0, AgentState::new(0.0, 0.0, 0.0, 10.0)),
                Agent::new(5.0, 2.0, AgentState::new(3.4, 2.9, PI / 2.0, 10.0)),
            ],
            vec![],
        );
        let fm = rasterize(&s, 256, 256, 3).unwrap();
        assert_eq!(connected_components(&fm, 2, 0.25).len(), 1);
        let det = extract_agents(&fm, &AgentConfig::default());
        assert_eq!(det.len(), 2);
    }

    #[test]
    fn min_area_rect_of_rotated_square_grid() {
        // brute force over angles agrees with the calipers result
        let a = 0.4f64;
        let axis = Vec2::from_angle(a);
        let pts: Vec<Vec2> = (0..10)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| axis * i as f64 + axis.perp() * j as f64)
            .collect();
        let r = min_area_rect(&pts).unwrap();
        let mut brute = f64::INFINITY;
        for k in 0..18000 {
            let t = k as f64 * PI / 18000.0;
            let (u, v) = (Vec2::from_angle(t), Vec2::from_angle(t).perp());
            let su: Vec<f64> = pts.iter().map(|p| p.dot(u)).collect();
            let sv: Vec<f64> = pts.iter().map(|p| p.dot(v)).collect();
            let ext = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min);
            brute = brute.min(ext(&su) * ext(&sv));
        }
        assert!((r.area() - 27.0).abs() < 1e-9);
        assert!(r.area() <= brute + 1e-9);
    }
}
