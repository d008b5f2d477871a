//! Seeded synthetic scenario corpus.
//!
//! Five templates: parallel straight lanes, a curved road, T- and
//! X-junctions with turn connectors, and a two-into-one merge. Geometry is
//! laid out in meters independently of the range, then clipped to the range
//! square, so the same seed yields the same layout at every scale.
//!
//! Scenario `i` draws from a ChaCha8 stream keyed by `(seed, i)`; scenarios
//! are independent of each other and of `count`.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cumulative_lengths, point_at_arc_length, Vec2};
use crate::scenario::{normalize_scenario, Agent, AgentState, Centerline, Scenario, DEFAULT_RANGE, DEFAULT_V_MAX};

pub const LANE_WIDTH: f64 = 3.5;
/// Tightest turn any connector may take, meters.
pub const MIN_TURN_RADIUS: f64 = 8.0;
/// Agents are kept at least this far apart, center to center.
const AGENT_SPACING: f64 = 8.0;
const SAMPLE_STEP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("corpus config: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Straight,
    Curved,
    TJunction,
    XJunction,
    Merge,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::Straight,
        Template::Curved,
        Template::TJunction,
        Template::XJunction,
        Template::Merge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::Curved => "curved",
            Template::TJunction => "t_junction",
            Template::XJunction => "x_junction",
            Template::Merge => "merge",
        }
    }
}

/// Relative template frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateMix {
    pub straight: f64,
    pub curved: f64,
    pub t_junction: f64,
    pub x_junction: f64,
    pub merge: f64,
}

impl Default for TemplateMix {
    fn default() -> Self {
        Self {
            straight: 1.0,
            curved: 1.0,
            t_junction: 1.0,
            x_junction: 1.0,
            merge: 1.0,
        }
    }
}

impl TemplateMix {
    pub fn only(t: Template) -> Self {
        let mut m = TemplateMix {
            straight: 0.0,
            curved: 0.0,
            t_junction: 0.0,
            x_junction: 0.0,
            merge: 0.0,
        };
        *m.weight_mut(t) = 1.0;
        m
    }

    fn weight_mut(&mut self, t: Template) -> &mut f64 {
        match t {
            Template::Straight => &mut self.straight,
            Template::Curved => &mut self.curved,
            Template::TJunction => &mut self.t_junction,
            Template::XJunction => &mut self.x_junction,
            Template::Merge => &mut self.merge,
        }
    }

    fn weights(&self) -> [f64; 5] {
        [self.straight, self.curved, self.t_junction, self.x_junction, self.merge]
    }
}

/// Corpus settings, usually read from TOML:
///
/// ```toml
/// count = 200
/// range = 80.0
/// max_agents = 6
///
/// [templates]
/// straight = 1.0
/// x_junction = 2.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub range: f64,
    pub v_max: f64,
    pub max_agents: usize,
    pub templates: TemplateMix,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 200,
            range: DEFAULT_RANGE,
            v_max: DEFAULT_V_MAX,
            max_agents: 6,
            templates: TemplateMix::default(),
        }
    }
}

impl CorpusConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let cfg: CorpusConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        if !(self.range.is_finite() && self.range >= 10.0) {
            return bad(format!("range {} must be at least 10 m", self.range));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return bad(format!("v_max {} must be positive", self.v_max));
        }
        let w = self.templates.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return bad(format!("template weights {w:?} must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

/// Builds the corpus in parallel; output order follows scenario index.
pub fn generate_synthetic_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<Scenario>, CorpusError> {
    cfg.validate()?;
    Ok((0..cfg.count)
        .into_par_iter()
        .map(|i| generate_scenario(cfg, seed, i as u64))
        .collect())
}

/// Scenario `index` of the corpus for `seed`.
pub fn generate_scenario(cfg: &CorpusConfig, seed: u64, index: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let dist = WeightedIndex::new(cfg.templates.weights()).expect("validated weights");
    let template = Template::ALL[dist.sample(&mut rng)];
    let lanes = template_lanes(template, &mut rng);
    let h = 0.5 * cfg.range;
    let clipped: Vec<Centerline> = lanes
        .iter()
        .flat_map(|l| crate::scenario::clip_polyline(l, h))
        .filter(|c| c.length() >= 1.0)
        .collect();
    let base = Scenario::new(clipped, vec![], cfg.range, cfg.v_max).expect("lane-only scenario is valid");
    let mut s = normalize_scenario(&base).expect("templates always cross the range square");
    s.agents = place_agents(&s, cfg.max_agents, &mut rng);
    s.metadata.insert("template".into(), template.name().into());
    s.metadata.insert("seed".into(), seed.to_string());
    s.metadata.insert("index".into(), index.to_string());
    s
}

fn template_lanes(t: Template, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    match t {
        Template::Straight => straight(rng),
        Template::Curved => curved(rng),
        Template::TJunction => junction(rng, 3),
        Template::XJunction => junction(rng, 4),
        Template::Merge => merge(rng),
    }
}

/// Lanes run this far from the template origin before clipping, enough to
/// cross the corner of the largest range square.
const EXTENT: f64 = 100.0;

fn right(d: Vec2) -> Vec2 {
    Vec2::new(d.y, -d.x)
}

fn rotate(d: Vec2, a: f64) -> Vec2 {
    let (s, c) = a.sin_cos();
    Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y)
}

fn segment(a: Vec2, b: Vec2) -> Vec<Vec2> {
    let n = (a.distance(b) / SAMPLE_STEP).ceil().max(1.0) as usize;
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

fn small_offset(rng: &mut ChaCha8Rng, r: f64) -> Vec2 {
    Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r))
}

fn straight(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    let u = Vec2::from_angle(rng.random_range(-PI..PI));
    let n = rng.random_range(1..=3usize);
    let two_way = n > 1 && rng.random_bool(0.5);
    let c = small_offset(rng, 5.0) + right(u) * (-(n as f64 - 1.0) * 0.5 * LANE_WIDTH);
    (0..n)
        .map(|k| {
            let o = c + right(u) * (k as f64 * LANE_WIDTH);
            let (a, b) = (o - u * EXTENT, o + u * EXTENT);
            if two_way && k % 2 == 1 {
                segment(b, a)
            } else {
                segment(a, b)
            }
        })
        .collect()
}

/// Straight, constant-curvature arc, straight, centered on the arc midpoint.
fn curved(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    let radius = rng.random_range(25.0..80.0);
    let sweep = rng.random_range(30f64..110.0).to_radians();
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let half_arc = 0.5 * sweep * radius;
    let kappa = |s: f64| if s.abs() <= half_arc { sign / radius } else { 0.0 };
    let steps = (EXTENT / SAMPLE_STEP) as usize;
    // integrate heading and position outward from the midpoint both ways
    let trace = |dir: f64| {
        let (mut p, mut th) = (Vec2::new(0.0, 0.0), 0.0f64);
        let mut pts = vec![(p, th)];
        for i in 0..steps {
            let s = dir * (i as f64 + 0.5) * SAMPLE_STEP;
            th += dir * kappa(s) * SAMPLE_STEP;
            p += Vec2::from_angle(th) * (dir * SAMPLE_STEP);
            pts.push((p, th));
        }
        pts
    };
    let mut path: Vec<(Vec2, f64)> = trace(-1.0).into_iter().rev().collect();
    path.extend(trace(1.0).into_iter().skip(1));
    let base = rng.random_range(-PI..PI);
    let shift = small_offset(rng, 5.0);
    let place = |p: Vec2| rotate(p, base) + shift;
    let centre: Vec<Vec2> = path.iter().map(|&(p, _)| place(p)).collect();
    let mut lanes = vec![centre];
    if rng.random_bool(0.6) {
        let back: Vec<Vec2> = path
            .iter()
            .rev()
            .map(|&(p, th)| place(p + right(Vec2::from_angle(th)) * -LANE_WIDTH))
            .collect();
        lanes.push(back);
    }
    lanes
}

/// Cubic Bézier between two poses with arc-like handles.
fn bezier_connector(p0: Vec2, d0: Vec2, p1: Vec2, d1: Vec2) -> Vec<Vec2> {
    let chord = p0.distance(p1);
    let phi = d0.cross(d1).atan2(d0.dot(d1)).abs();
    // (4/3) tan(phi/4) r with r = chord / (2 sin(phi/2)); tends to chord/3
    let handle = if phi < 1e-6 {
        chord / 3.0
    } else {
        (4.0 / 3.0) * (phi / 4.0).tan() * chord / (2.0 * (phi / 2.0).sin())
    };
    let (c1, c2) = (p0 + d0 * handle, p1 - d1 * handle);
    let n = (chord / (0.5 * SAMPLE_STEP)).ceil().max(4.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let m = 1.0 - t;
            p0 * (m * m * m) + c1 * (3.0 * m * m * t) + c2 * (3.0 * m * t * t) + p1 * (t * t * t)
        })
        .collect()
}

/// Largest discrete curvature along a polyline (turning angle over step).
pub fn max_discrete_curvature(points: &[Vec2]) -> f64 {
    points
        .windows(3)
        .map(|w| {
            let (a, b) = (w[1] - w[0], w[2] - w[1]);
            let turn = a.cross(b).atan2(a.dot(b)).abs();
            turn / (0.5 * (a.norm() + b.norm())).max(1e-12)
        })
        .fold(0.0, f64::max)
}

/// Junction with `arms` two-way roads meeting at a common center. Approach
/// and exit lanes stop at `box_r` from the center, where connectors for
/// every through and turning movement take over.
fn junction(rng: &mut ChaCha8Rng, arms: usize) -> Vec<Vec<Vec2>> {
    let half = 0.5 * LANE_WIDTH;
    for _attempt in 0..64 {
        let base = rng.random_range(-PI..PI);
        let box_r = rng.random_range(10.5..14.0);
        let center = small_offset(rng, 6.0);
        let mut dirs: Vec<Vec2> = Vec::with_capacity(arms);
        if arms == 3 {
            let side = if rng.random_bool(0.5) { 0.5 * PI } else { -0.5 * PI };
            for a in [0.0, PI, side + rng.random_range(-0.2..0.2)] {
                dirs.push(Vec2::from_angle(base + a));
            }
        } else {
            for k in 0..arms {
                let jitter = if k == 0 { 0.0 } else { rng.random_range(-0.2..0.2) };
                dirs.push(Vec2::from_angle(base + k as f64 * 0.5 * PI + jitter));
            }
        }
        let mut lanes = Vec::new();
        let mut ends = Vec::new();
        let mut starts = Vec::new();
        for &u in &dirs {
            let off_in = right(-u) * half;
            let off_out = right(u) * half;
            let (a_in, b_in) = (center + u * EXTENT + off_in, center + u * box_r + off_in);
            let (a_out, b_out) = (center + u * box_r + off_out, center + u * EXTENT + off_out);
            lanes.push(segment(a_in, b_in));
            lanes.push(segment(a_out, b_out));
            ends.push((b_in, -u));
            starts.push((a_out, u));
        }
        let mut ok = true;
        for (i, &(p0, d0)) in ends.iter().enumerate() {
            for (j, &(p1, d1)) in starts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let c = bezier_connector(p0, d0, p1, d1);
                ok &= max_discrete_curvature(&c) <= 1.0 / MIN_TURN_RADIUS;
                lanes.push(c);
            }
        }
        if ok {
            return lanes;
        }
    }
    unreachable!("junction parameters always admit an 8 m turn within a few draws")
}

/// Two incoming lanes join into one; sometimes with an opposing lane.
fn merge(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    let u = Vec2::from_angle(rng.random_range(-PI..PI));
    let m = small_offset(rng, 8.0);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let theta = side * rng.random_range(15f64..35.0).to_radians();
    let reach = rng.random_range(22.0..32.0);
    let d0 = rotate(u, theta);
    let q = m - d0 * reach;
    let mut ramp = segment(q - d0 * EXTENT, q);
    ramp.extend(bezier_connector(q, d0, m, u).into_iter().skip(1));
    let mut lanes = vec![segment(m - u * EXTENT, m), ramp, segment(m, m + u * EXTENT)];
    if rng.random_bool(0.5) {
        // opposing lane on the far side from the ramp
        let o = right(u) * (side * LANE_WIDTH);
        lanes.push(segment(m + u * EXTENT + o, m - u * EXTENT + o));
    }
    lanes
}

fn place_agents(s: &Scenario, max_agents: usize, rng: &mut ChaCha8Rng) -> Vec<Agent> {
    let n = rng.random_range(0..=max_agents);
    if n == 0 {
        return Vec::new();
    }
    let lengths: Vec<f64> = s.lanes.iter().map(|l| l.length()).collect();
    let Ok(pick) = WeightedIndex::new(&lengths) else {
        return Vec::new();
    };
    let margin = 3.0;
    let h = s.half_range() - margin;
    let mut agents: Vec<Agent> = Vec::new();
    for _ in 0..20 * n {
        if agents.len() == n {
            break;
        }
        let lane = s.lanes[pick.sample(rng)].waypoints();
        let cum = cumulative_lengths(lane);
        let total = *cum.last().unwrap();
        let at = rng.random_range(0.0..total);
        let p = point_at_arc_length(lane, &cum, at);
        let q = point_at_arc_length(lane, &cum, (at + 0.5).min(total));
        let q0 = point_at_arc_length(lane, &cum, (at - 0.5).max(0.0));
        let Some(d) = (q - q0).normalized() else { continue };
        if p.x.abs() > h || p.y.abs() > h {
            continue;
        }
        if agents.iter().any(|a| a.initial_state.position().distance(p) < AGENT_SPACING) {
            continue;
        }
        let speed = if rng.random_bool(0.15) {
            0.0
        } else {
            rng.random_range(0.1..0.8) * s.v_max
        };
        let length = rng.random_range(4.0..5.5);
        let width = rng.random_range(1.8..2.2);
        agents.push(Agent::new(length, width, AgentState::new(p.x, p.y, d.angle(), speed)));
    }
    agents
}
