//! Vector-side representation of a driving scenario: lane centerlines plus
//! agents with initial states, expressed in scenario-centered meters.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};

/// A centerline waypoint in meters.
pub type Waypoint = Vec2;

/// Default trajectory timestep in seconds (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;
/// Default maximum agent speed used by the velocity channel, m/s.
pub const DEFAULT_V_MAX: f64 = 30.0;
/// Default scenario range in meters.
pub const DEFAULT_RANGE: f64 = 80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario has no lanes")]
    EmptyScenario,
    #[error("polyline needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("polyline has coincident consecutive waypoints at index {0}")]
    DegeneratePolyline(usize),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("v_max must be positive, got {0}")]
    InvalidVMax(f64),
    #[error("dt must be positive, got {0}")]
    InvalidDt(f64),
    #[error("agent {index}: {reason}")]
    InvalidAgent { index: usize, reason: String },
}

/// Unit direction vector for every waypoint of a polyline.
///
/// Index `i < last` gets the direction of `p[i+1] - p[i]`; the last waypoint
/// reuses the previous segment's direction.
pub fn polyline_directions(points: &[Waypoint]) -> Result<Vec<Vec2>, ScenarioError> {
    if points.len() < 2 {
        return Err(ScenarioError::TooFewWaypoints(points.len()));
    }
    let mut dirs = Vec::with_capacity(points.len());
    for (i, w) in points.windows(2).enumerate() {
        let d = (w[1] - w[0])
            .normalized()
            .ok_or(ScenarioError::DegeneratePolyline(i))?;
        dirs.push(d);
    }
    dirs.push(*dirs.last().unwrap());
    Ok(dirs)
}

/// A lane centerline ordered along the driving direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    waypoints: Vec<Waypoint>,
}

impl Centerline {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, ScenarioError> {
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(ScenarioError::NonFinite("centerline"));
        }
        polyline_directions(&waypoints)?;
        Ok(Self { waypoints })
    }

    /// Builds a centerline after dropping consecutive duplicates (closer than
    /// `1e-9` m). Returns `None` if fewer than two distinct points remain.
    pub fn from_points_dedup(points: &[Waypoint]) -> Option<Self> {
        let mut out: Vec<Waypoint> = Vec::with_capacity(points.len());
        for p in points {
            if out.last().is_none_or(|q| q.distance(*p) > 1e-9) {
                out.push(*p);
            }
        }
        Centerline::new(out).ok()
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn into_waypoints(self) -> Vec<Waypoint> {
        self.waypoints
    }

    pub fn first(&self) -> Waypoint {
        self.waypoints[0]
    }

    pub fn last(&self) -> Waypoint {
        *self.waypoints.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        crate::geometry::polyline_length(&self.waypoints)
    }

    pub fn directions(&self) -> Vec<Vec2> {
        polyline_directions(&self.waypoints).expect("validated on construction")
    }

    fn translated(&self, d: Vec2) -> Centerline {
        Centerline {
            waypoints: self.waypoints.iter().map(|p| *p + d).collect(),
        }
    }
}

/// Kinematic state `[x, y, heading, speed]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
    /// Meters per second, non-negative.
    pub speed: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            speed,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }
}

/// A traffic participant: bounding box size plus its states.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub length: f64,
    pub width: f64,
    pub initial_state: AgentState,
    /// States at a fixed timestep; `trajectory[0] == initial_state`.
    pub trajectory: Option<Vec<AgentState>>,
}

impl Agent {
    pub fn new(length: f64, width: f64, initial_state: AgentState) -> Self {
        Self {
            length,
            width,
            initial_state,
            trajectory: None,
        }
    }

    fn validate(&self, index: usize, v_max: f64) -> Result<(), ScenarioError> {
        let bad = |reason: String| ScenarioError::InvalidAgent { index, reason };
        if !(self.length.is_finite() && self.width.is_finite()) || !self.initial_state.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        if self.width <= 0.0 || self.length <= 0.0 {
            return Err(bad(format!(
                "length {} and width {} must be positive",
                self.length, self.width
            )));
        }
        if self.length < self.width {
            return Err(bad(format!(
                "length {} is smaller than width {}",
                self.length, self.width
            )));
        }
        let s = &self.initial_state;
        if s.speed < 0.0 || s.speed > v_max {
            return Err(bad(format!("speed {} outside [0, v_max={}]", s.speed, v_max)));
        }
        if let Some(traj) = &self.trajectory {
            if traj.first() != Some(&self.initial_state) {
                return Err(bad("trajectory does not start at the initial state".into()));
            }
            for (k, st) in traj.iter().enumerate() {
                if !st.is_finite() {
                    return Err(bad(format!("trajectory[{k}] is not finite")));
                }
                if st.speed < 0.0 || st.speed > v_max {
                    return Err(bad(format!(
                        "trajectory[{k}] speed {} outside [0, v_max={}]",
                        st.speed, v_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A static lane map plus agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub lanes: Vec<Centerline>,
    pub agents: Vec<Agent>,
    /// Side length of the square scene, meters.
    pub range: f64,
    pub v_max: f64,
    /// Trajectory timestep, seconds.
    pub dt: f64,
    /// Free-form provenance, kept sorted for stable serialization.
    pub metadata: BTreeMap<String, String>,
}

impl Scenario {
    /// Validates everything except containment in the range square, which
    /// only holds after [`normalize_scenario`].
    pub fn new(
        lanes: Vec<Centerline>,
        agents: Vec<Agent>,
        range: f64,
        v_max: f64,
    ) -> Result<Self, ScenarioError> {
        let s = Scenario {
            lanes,
            agents,
            range,
            v_max,
            dt: DEFAULT_DT,
            metadata: BTreeMap::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(ScenarioError::InvalidRange(self.range));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(ScenarioError::InvalidVMax(self.v_max));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ScenarioError::InvalidDt(self.dt));
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.validate(i, self.v_max)?;
        }
        Ok(())
    }

    pub fn half_range(&self) -> f64 {
        0.5 * self.range
    }

    /// True when every lane waypoint and agent position lies inside the
    /// closed range square centered at the origin.
    pub fn is_within_range(&self) -> bool {
        let h = self.half_range();
        let inside = |p: Vec2| p.x.abs() <= h && p.y.abs() <= h;
        self.lanes.iter().flat_map(|l| l.waypoints()).all(|p| inside(*p))
            && self.agents.iter().all(|a| inside(a.initial_state.position()))
    }

    fn translated(&self, d: Vec2) -> Scenario {
        let shift = |s: &AgentState| AgentState {
            x: s.x + d.x,
            y: s.y + d.y,
            ..*s
        };
        Scenario {
            lanes: self.lanes.iter().map(|l| l.translated(d)).collect(),
            agents: self
                .agents
                .iter()
                .map(|a| Agent {
                    initial_state: shift(&a.initial_state),
                    trajectory: a.trajectory.as_ref().map(|t| t.iter().map(shift).collect()),
                    ..*a
                })
                .collect(),
            ..self.clone()
        }
    }
}

fn lane_bbox_center(lanes: &[Centerline]) -> Vec2 {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in lanes.iter().flat_map(|l| l.waypoints()) {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo + hi) * 0.5
}

/// Liang-Barsky clip of segment `a`-`b` against `[-h, h]^2`. Returns the
/// parameter interval of the visible part.
fn clip_segment(a: Vec2, b: Vec2, h: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, a.x + h),
        (d.x, h - a.x),
        (-d.y, a.y + h),
        (d.y, h - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

fn clamp_to_square(p: Vec2, h: f64) -> Vec2 {
    Vec2::new(p.x.clamp(-h, h), p.y.clamp(-h, h))
}

/// Splits a polyline at the boundary of `[-h, h]^2`, keeping the inside parts.
pub fn clip_polyline(points: &[Waypoint], h: f64) -> Vec<Centerline> {
    let mut pieces = Vec::new();
    let mut current: Vec<Waypoint> = Vec::new();
    let flush = |cur: &mut Vec<Waypoint>, out: &mut Vec<Centerline>| {
        if let Some(c) = Centerline::from_points_dedup(cur) {
            out.push(c);
        }
        cur.clear();
    };
    for w in points.windows(2) {
        match clip_segment(w[0], w[1], h) {
            None => flush(&mut current, &mut pieces),
            Some((t0, t1)) => {
                let p0 = if t0 <= 0.0 { w[0] } else { w[0].lerp(w[1], t0) };
                let p1 = if t1 >= 1.0 { w[1] } else { w[0].lerp(w[1], t1) };
                if t0 > 0.0 {
                    flush(&mut current, &mut pieces);
                }
                if current.is_empty() {
                    current.push(clamp_to_square(p0, h));
                }
                current.push(clamp_to_square(p1, h));
                if t1 < 1.0 {
                    flush(&mut current, &mut pieces);
                }
            }
        }
    }
    flush(&mut current, &mut pieces);
    pieces
}

fn clip_to_range(s: &Scenario) -> Scenario {
    let h = s.half_range();
    let lanes = s
        .lanes
        .iter()
        .flat_map(|l| clip_polyline(l.waypoints(), h))
        .collect();
    let agents = s
        .agents
        .iter()
        .filter(|a| {
            let p = a.initial_state.position();
            p.x.abs() <= h && p.y.abs() <= h
        })
        .cloned()
        .collect();
    Scenario {
        lanes,
        agents,
        ..s.clone()
    }
}

/// Translates the scene so the lane bounding box is centered at the origin,
/// then clips lanes (splitting at boundary crossings) and drops agents
/// outside the range square.
///
/// Idempotent: a normalized scenario is returned unchanged.
pub fn normalize_scenario(s: &Scenario) -> Result<Scenario, ScenarioError> {
    if s.lanes.is_empty() {
        return Err(ScenarioError::EmptyScenario);
    }
    s.validate()?;
    // Shifts below this are treated as already centered.
    let eps = 1e-9 * s.range.max(1.0);
    let c = lane_bbox_center(&s.lanes);
    let shifted = if c.norm() > eps { s.translated(-c) } else { s.clone() };
    let clipped = clip_to_range(&shifted);
    if clipped.lanes.is_empty() {
        return Err(ScenarioError::EmptyScenario);
    }
    // Clipping may leave the box off-center; recentering the clipped
    // geometry cannot push anything outside again.
    let c2 = lane_bbox_center(&clipped.lanes);
    if c2.norm() <= eps {
        return Ok(clipped);
    }
    let mut out = clipped.translated(-c2);
    let h = out.half_range();
    // only rounding can leave the square here, so clamp instead of clipping
    out.lanes = out
        .lanes
        .iter()
        .filter_map(|l| {
            let pts: Vec<Waypoint> = l.waypoints().iter().map(|p| clamp_to_square(*p, h)).collect();
            Centerline::from_points_dedup(&pts)
        })
        .collect();
    out.agents.retain(|a| {
        let p = a.initial_state.position();
        p.x.abs() <= h && p.y.abs() <= h
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lane(pts: &[(f64, f64)]) -> Centerline {
        Centerline::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn scen(lanes: Vec<Centerline>, range: f64) -> Scenario {
        Scenario::new(lanes, vec![], range, DEFAULT_V_MAX).unwrap()
    }

    #[test]
    fn straight_lane_is_translated_to_origin() {
        let s = scen(vec![lane(&[(100.0, 100.0), (180.0, 100.0)])], 80.0);
        let n = normalize_scenario(&s).unwrap();
        assert_eq!(n.lanes.len(), 1);
        assert_eq!(n.lanes[0].waypoints(), &[Vec2::new(-40.0, 0.0), Vec2::new(40.0, 0.0)]);
    }

    #[test]
    fn centered_scenario_is_unchanged() {
        let s = scen(vec![lane(&[(-30.0, -5.0), (30.0, 5.0)])], 80.0);
        assert_eq!(normalize_scenario(&s).unwrap(), s);
    }

    #[test]
    fn long_lane_is_clipped() {
        let s = scen(vec![lane(&[(0.0, 0.0), (0.0, 100.0)])], 80.0);
        let n = normalize_scenario(&s).unwrap();
        assert_eq!(n.lanes.len(), 1);
        assert_eq!(n.lanes[0].waypoints(), &[Vec2::new(0.0, -40.0), Vec2::new(0.0, 40.0)]);
    }

    /// Brute-force clipper: densely sample each segment and keep the points
    /// that fall inside the square.
    fn brute_inside_samples(points: &[Vec2], h: f64) -> Vec<Vec2> {
        let mut out = vec![];
        for w in points.windows(2) {
            for k in 0..=2000 {
                let p = w[0].lerp(w[1], k as f64 / 2000.0);
                if p.x.abs() <= h && p.y.abs() <= h {
                    out.push(p);
                }
            }
        }
        out
    }

    #[test]
    fn clipping_matches_brute_force_sampling() {
        // zig-zag leaving and re-entering the square twice
        let pts: Vec<Vec2> = [(-60.0, 0.0), (0.0, 10.0), (0.0, 70.0), (10.0, 0.0), (70.0, -10.0)]
            .iter()
            .map(|&(x, y)| Vec2::new(x, y))
            .collect();
        let pieces = clip_polyline(&pts, 40.0);
        assert_eq!(pieces.len(), 2);
        for p in brute_inside_samples(&pts, 40.0) {
            let d = pieces
                .iter()
                .filter_map(|c| crate::geometry::project_onto_polyline(c.waypoints(), p))
                .map(|pr| pr.distance)
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9, "sample {p:?} not covered ({d})");
        }
        for c in &pieces {
            for w in c.waypoints() {
                assert!(w.x.abs() <= 40.0 && w.y.abs() <= 40.0);
            }
        }
    }

    #[test]
    fn agents_outside_are_dropped() {
        let mut s = scen(vec![lane(&[(-50.0, 0.0), (50.0, 0.0)])], 80.0);
        s.agents.push(Agent::new(4.5, 2.0, AgentState::new(0.0, 0.0, 0.0, 5.0)));
        s.agents.push(Agent::new(4.5, 2.0, AgentState::new(45.0, 0.0, 0.0, 5.0)));
        let n = normalize_scenario(&s).unwrap();
        assert_eq!(n.agents.len(), 1);
    }

    #[test]
    fn empty_scenario_is_rejected() {
        let s = scen(vec![], 80.0);
        assert_eq!(normalize_scenario(&s), Err(ScenarioError::EmptyScenario));
    }

    #[test]
    fn directions_examples() {
        let d = polyline_directions(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)])
            .unwrap();
        assert_eq!(d, vec![Vec2::new(1.0, 0.0); 3]);
        let d = polyline_directions(&[Vec2::new(0.0, 0.0), Vec2::new(0.0, 2.0)]).unwrap();
        assert_eq!(d, vec![Vec2::new(0.0, 1.0); 2]);
        assert_eq!(
            polyline_directions(&[Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)]),
            Err(ScenarioError::DegeneratePolyline(0))
        );
    }

    #[test]
    fn quarter_arc_tangents_within_one_degree() {
        let r = 20.0;
        let pts: Vec<Vec2> = (0..=90)
            .map(|d| {
                let a = (d as f64).to_radians();
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let dirs = polyline_directions(&pts).unwrap();
        for (d, deg) in dirs.iter().zip(0..=90) {
            let a = (deg as f64).to_radians();
            let analytic = Vec2::new(-a.sin(), a.cos());
            let err = d.cross(analytic).atan2(d.dot(analytic)).abs().to_degrees();
            assert!(err <= 1.0, "deg {deg}: {err}");
        }
    }

    #[test]
    fn agent_invariants() {
        let mut s = scen(vec![lane(&[(-10.0, 0.0), (10.0, 0.0)])], 80.0);
        s.agents.push(Agent::new(2.0, 4.0, AgentState::new(0.0, 0.0, 0.0, 1.0)));
        assert!(matches!(s.validate(), Err(ScenarioError::InvalidAgent { index: 0, .. })));
        s.agents[0] = Agent::new(4.0, 2.0, AgentState::new(0.0, 0.0, 0.0, 31.0));
        assert!(s.validate().is_err());
        let mut a = Agent::new(4.0, 2.0, AgentState::new(0.0, 0.0, 0.0, 1.0));
        a.trajectory = Some(vec![AgentState::new(1.0, 0.0, 0.0, 1.0)]);
        s.agents[0] = a;
        assert!(s.validate().is_err());
    }

    fn arb_polyline() -> impl Strategy<Value = Vec<Vec2>> {
        prop::collection::vec((-120.0f64..120.0, -120.0f64..120.0), 2..8).prop_filter_map(
            "distinct consecutive",
            |v| {
                let pts: Vec<Vec2> = v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
                Centerline::from_points_dedup(&pts).map(|c| c.into_waypoints())
            },
        )
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(lines in prop::collection::vec(arb_polyline(), 1..4), range in 20.0f64..150.0) {
            let lanes = lines.into_iter().map(|p| Centerline::new(p).unwrap()).collect();
            let s = scen(lanes, range);
            if let Ok(n) = normalize_scenario(&s) {
                prop_assert!(n.is_within_range());
                let nn = normalize_scenario(&n).unwrap();
                prop_assert_eq!(nn, n);
            }
        }

        #[test]
        fn directions_are_unit(p in arb_polyline()) {
            for d in polyline_directions(&p).unwrap() {
                prop_assert!((d.norm() - 1.0).abs() <= 1e-9);
            }
        }
    }
}
