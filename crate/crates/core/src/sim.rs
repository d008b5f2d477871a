//! Rule-based multi-future rollout over a lane graph.
//!
//! Each agent is matched to a directed lane, follows it at constant speed
//! with pure-pursuit steering, and at every branching vertex takes the k-th
//! straightest out-edge in future k. Agents without a lane keep heading and
//! speed.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{cumulative_lengths, point_at_arc_length, wrap_angle, Vec2};
use crate::scenario::{AgentState, Scenario};
use crate::vectorize::LaneGraph;

/// Lanes farther than this from an agent are not assigned.
pub const MAX_LATERAL: f64 = 5.0;
/// Lanes whose direction differs from the heading by more than this are not
/// assigned.
pub const MAX_MISALIGNMENT: f64 = std::f64::consts::FRAC_PI_3;
/// Meters of assignment cost per radian of heading misalignment.
const HEADING_WEIGHT: f64 = 4.0;
/// Largest distance travelled in one integration substep.
const MAX_SUBSTEP_M: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("horizon {horizon} s is shorter than the timestep {dt} s")]
    HorizonTooShort { horizon: f64, dt: f64 },
    #[error("K must be at least 1")]
    ZeroFutures,
    #[error("invalid rollout parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub k: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Pure-pursuit lookahead distance in meters.
    pub lookahead: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            k: 3,
            horizon: 8.0,
            dt: 0.1,
            lookahead: 2.0,
        }
    }
}

impl RolloutConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).floor() as usize
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.k == 0 {
            return Err(SimError::ZeroFutures);
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidParameter("dt must be positive"));
        }
        if !(self.lookahead > 0.0) {
            return Err(SimError::InvalidParameter("lookahead must be positive"));
        }
        if !(self.horizon >= self.dt) {
            return Err(SimError::HorizonTooShort {
                horizon: self.horizon,
                dt: self.dt,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneAssignment {
    pub edge: usize,
    /// Arc length of the projection along the edge.
    pub arc_length: f64,
    pub lateral: f64,
    /// Absolute heading difference to the lane tangent, radians.
    pub misalignment: f64,
}

/// Nearest directed edge by lateral distance plus a heading penalty, or
/// `None` beyond the distance or misalignment gates.
pub fn assign_lane(state: &AgentState, map: &LaneGraph) -> Option<LaneAssignment> {
    let p = state.position();
    let mut best: Option<(f64, LaneAssignment)> = None;
    for (i, e) in map.edges.iter().enumerate() {
        let Some(proj) = crate::geometry::project_onto_polyline(e.geometry.waypoints(), p) else {
            continue;
        };
        let mis = wrap_angle(state.heading - proj.tangent.angle()).abs();
        if proj.distance > MAX_LATERAL || mis > MAX_MISALIGNMENT {
            continue;
        }
        let cost = proj.distance + HEADING_WEIGHT * mis;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((
                cost,
                LaneAssignment {
                    edge: i,
                    arc_length: proj.arc_length,
                    lateral: proj.distance,
                    misalignment: mis,
                },
            ));
        }
    }
    best.map(|(_, a)| a)
}

/// Out-edges of a vertex ordered by absolute heading change from
/// `incoming`, straightest first; ties by edge index.
pub fn ordered_options(map: &LaneGraph, vertex: usize, incoming: Vec2) -> Vec<usize> {
    let mut opts: Vec<(f64, usize)> = map
        .out_edges(vertex)
        .into_iter()
        .map(|e| {
            let dirs = map.edges[e].geometry.directions();
            let out = *dirs.last().unwrap();
            (wrap_angle(out.angle() - incoming.angle()).abs(), e)
        })
        .collect();
    opts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    opts.into_iter().map(|(_, e)| e).collect()
}

/// The polyline an agent will track, with the edge chosen at every branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub points: Vec<Vec2>,
    /// Edges in travel order, starting with the assigned one.
    pub edges: Vec<usize>,
    /// Whether the path was extended straight past a dead end.
    pub extrapolated: bool,
}

/// Follows the graph from an assignment for at least `length` meters,
/// taking option `choice mod n` at each vertex with `n > 1` out-edges and
/// continuing straight past dead ends.
pub fn plan_path(map: &LaneGraph, start: &LaneAssignment, choice: usize, length: f64) -> PlannedPath {
    let first = &map.edges[start.edge].geometry;
    let cum = cumulative_lengths(first.waypoints());
    let mut points = vec![point_at_arc_length(first.waypoints(), &cum, start.arc_length)];
    for (p, c) in first.waypoints().iter().zip(&cum) {
        if *c > start.arc_length + 1e-9 {
            points.push(*p);
        }
    }
    let mut edges = vec![start.edge];
    let mut travelled = first.length() - start.arc_length;
    let mut current = start.edge;
    let mut extrapolated = false;
    // revisits are allowed on loops; the cap only guards degenerate graphs
    let mut hops = 0;
    while travelled < length && hops < 10_000 {
        hops += 1;
        let e = &map.edges[current];
        let incoming = *e.geometry.directions().last().unwrap();
        let opts = ordered_options(map, e.to, incoming);
        if opts.is_empty() {
            let last = *points.last().unwrap();
            points.push(last + incoming * (length - travelled + 1.0));
            extrapolated = true;
            break;
        }
        let next = if opts.len() > 1 { opts[choice % opts.len()] } else { opts[0] };
        let g = map.edges[next].geometry.waypoints();
        for p in g {
            if points.last().unwrap().distance(*p) > 1e-9 {
                points.push(*p);
            }
        }
        travelled += map.edges[next].geometry.length();
        edges.push(next);
        current = next;
    }
    if points.len() < 2 {
        let dir = map.edges[current].geometry.directions()[0];
        let p = points[0];
        points.push(p + dir * (length + 1.0));
        extrapolated = true;
    }
    PlannedPath {
        points,
        edges,
        extrapolated,
    }
}

/// Pure pursuit at constant speed along `path`, sampled every `dt`.
/// Returns `steps + 1` states starting with `initial`.
pub fn pursue(initial: &AgentState, path: &[Vec2], lookahead: f64, dt: f64, steps: usize) -> Vec<AgentState> {
    let cum = cumulative_lengths(path);
    let total = *cum.last().unwrap_or(&0.0);
    let v = initial.speed;
    let sub = ((v * dt / MAX_SUBSTEP_M).ceil() as usize).max(1);
    let h = dt / sub as f64;
    let (mut x, mut y, mut th) = (initial.x, initial.y, initial.heading);
    let mut s_proj = 0.0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*initial);
    for _ in 0..steps {
        for _ in 0..sub {
            let pos = Vec2::new(x, y);
            s_proj = project_forward(path, &cum, pos, s_proj, lookahead + v * h + 1.0);
            let target = point_at_arc_length(path, &cum, (s_proj + lookahead).min(total));
            let to = target - pos;
            let kappa = if to.norm() > 1e-9 {
                let alpha = wrap_angle(to.angle() - th);
                2.0 * alpha.sin() / to.norm().max(1e-6)
            } else {
                0.0
            };
            th = wrap_angle(th + v * kappa * h);
            x += v * th.cos() * h;
            y += v * th.sin() * h;
        }
        out.push(AgentState::new(x, y, th, v));
    }
    out
}

/// Arc length of the closest point on `path` within `[s0 - 1, s0 + window]`.
fn project_forward(path: &[Vec2], cum: &[f64], p: Vec2, s0: f64, window: f64) -> f64 {
    let lo = s0 - 1.0;
    let hi = s0 + window;
    let mut best = (f64::INFINITY, s0);
    for (i, w) in path.windows(2).enumerate() {
        if cum[i + 1] < lo {
            continue;
        }
        if cum[i] > hi {
            break;
        }
        let (d, t) = crate::geometry::point_segment_distance(p, w[0], w[1]);
        if d < best.0 {
            best = (d, cum[i] + t * (cum[i + 1] - cum[i]));
        }
    }
    best.1.max(s0)
}

/// Constant heading and speed.
pub fn constant_velocity(initial: &AgentState, dt: f64, steps: usize) -> Vec<AgentState> {
    let d = Vec2::from_angle(initial.heading) * (initial.speed * dt);
    (0..=steps)
        .map(|k| {
            let p = initial.position() + d * k as f64;
            AgentState::new(p.x, p.y, initial.heading, initial.speed)
        })
        .collect()
}

/// One joint prediction: a trajectory per agent and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFuture {
    /// `steps + 1` states per agent, the first being the initial state.
    pub trajectories: Vec<Vec<AgentState>>,
    pub probability: f64,
    /// Edge sequence followed by each agent; empty when unassigned.
    pub routes: Vec<Vec<usize>>,
}

/// Up to `cfg.k` distinct joint futures with uniform probabilities.
pub fn rollout(scene: &Scenario, map: &LaneGraph, cfg: &RolloutConfig) -> Result<Vec<JointFuture>, SimError> {
    cfg.validate()?;
    let steps = cfg.steps();
    if scene.agents.is_empty() {
        let p = 1.0 / cfg.k as f64;
        return Ok((0..cfg.k)
            .map(|_| JointFuture {
                trajectories: Vec::new(),
                probability: p,
                routes: Vec::new(),
            })
            .collect());
    }
    let assignments: Vec<Option<LaneAssignment>> = scene
        .agents
        .iter()
        .map(|a| if map.edges.is_empty() { None } else { assign_lane(&a.initial_state, map) })
        .collect();

    // plan every (future, agent) path first; identical route sets collapse
    let mut seen: HashSet<Vec<Vec<usize>>> = HashSet::new();
    let mut plans: Vec<Vec<Option<PlannedPath>>> = Vec::new();
    for k in 0..cfg.k {
        let paths: Vec<Option<PlannedPath>> = scene
            .agents
            .iter()
            .zip(&assignments)
            .map(|(a, asg)| {
                asg.as_ref().map(|asg| {
                    let need = a.initial_state.speed * steps as f64 * cfg.dt + cfg.lookahead + 5.0;
                    plan_path(map, asg, k, need)
                })
            })
            .collect();
        let routes: Vec<Vec<usize>> = paths.iter().map(|p| p.as_ref().map(|p| p.edges.clone()).unwrap_or_default()).collect();
        if seen.insert(routes) {
            plans.push(paths);
        }
    }
    let n = plans.len();
    let futures = plans
        .into_par_iter()
        .map(|paths| {
            let trajectories = scene
                .agents
                .iter()
                .zip(&paths)
                .map(|(a, p)| match p {
                    Some(p) => pursue(&a.initial_state, &p.points, cfg.lookahead, cfg.dt, steps),
                    None => constant_velocity(&a.initial_state, cfg.dt, steps),
                })
                .collect();
            let routes = paths.iter().map(|p| p.as_ref().map(|p| p.edges.clone()).unwrap_or_default()).collect();
            JointFuture {
                trajectories,
                probability: 1.0 / n as f64,
                routes,
            }
        })
        .collect();
    Ok(futures)
}

/// Copies of the scene with each future's trajectories filled in.
pub fn future_scenarios(scene: &Scenario, futures: &[JointFuture], dt: f64) -> Vec<Scenario> {
    futures
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let mut s = scene.clone();
            s.dt = dt;
            for (a, t) in s.agents.iter_mut().zip(&f.trajectories) {
                a.trajectory = Some(t.clone());
            }
            s.metadata.insert("future".into(), k.to_string());
            s.metadata.insert("probability".into(), format!("{}", f.probability));
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_onto_polyline;
    use crate::scenario::{Agent, Centerline};
    use std::f64::consts::PI;

    fn lane(pts: &[(f64, f64)]) -> Centerline {
        Centerline::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn arc(c: Vec2, r: f64, a0: f64, a1: f64) -> Centerline {
        let n = 40;
        Centerline::new((0..=n).map(|i| c + Vec2::from_angle(a0 + (a1 - a0) * i as f64 / n as f64) * r).collect()).unwrap()
    }

    fn scene(lanes: Vec<Centerline>, agents: Vec<Agent>) -> Scenario {
        Scenario::new(lanes, agents, 200.0, 30.0).unwrap()
    }

    fn car(x: f64, y: f64, heading: f64, v: f64) -> Agent {
        Agent::new(4.5, 1.9, AgentState::new(x, y, heading, v))
    }

    /// Straight approach splitting into a straight and a right turn.
    fn fork() -> Vec<Centerline> {
        vec![
            lane(&[(-60.0, 0.0), (0.0, 0.0)]),
            lane(&[(0.0, 0.0), (60.0, 0.0)]),
            {
                let mut pts = arc(Vec2::new(0.0, -10.0), 10.0, PI / 2.0, 0.0).into_waypoints();
                pts.push(Vec2::new(10.0, -60.0));
                Centerline::new(pts).unwrap()
            },
        ]
    }

    #[test]
    fn assignment_rules() {
        let lanes = vec![lane(&[(-50.0, 1.75), (50.0, 1.75)]), lane(&[(50.0, -1.75), (-50.0, -1.75)])];
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        // on the eastbound lane
        let a = assign_lane(&AgentState::new(0.0, 1.75, 0.0, 5.0), &map).unwrap();
        assert_eq!(a.edge, 0);
        // halfway between, facing west
        let a = assign_lane(&AgentState::new(3.0, 0.0, PI, 5.0), &map).unwrap();
        assert_eq!(a.edge, 1);
        let a = assign_lane(&AgentState::new(3.0, 0.0, 0.0, 5.0), &map).unwrap();
        assert_eq!(a.edge, 0);
        assert!(assign_lane(&AgentState::new(0.0, 12.0, 0.0, 5.0), &map).is_none());
        // perpendicular heading fails the alignment gate
        assert!(assign_lane(&AgentState::new(0.0, 1.75, PI / 2.0, 5.0), &map).is_none());
    }

    #[test]
    fn straight_lane_kinematics() {
        let lanes = vec![lane(&[(-40.0, 0.0), (100.0, 0.0)])];
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let s = scene(lanes, vec![car(-30.0, 0.0, 0.0, 10.0)]);
        let f = rollout(&s, &map, &RolloutConfig::default()).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].probability, 1.0);
        let t = &f[0].trajectories[0];
        assert_eq!(t.len(), 81);
        let end = t.last().unwrap();
        assert!((end.x - 50.0).abs() <= 1.0, "{end:?}");
        assert!(t.iter().all(|st| (st.speed - 10.0).abs() <= 1e-6 && st.y.abs() < 1e-9));
    }

    #[test]
    fn fork_gives_two_futures() {
        let lanes = fork();
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let s = scene(lanes, vec![car(-40.0, 0.0, 0.0, 8.0)]);
        let f = rollout(&s, &map, &RolloutConfig::default()).unwrap();
        assert_eq!(f.len(), 2);
        assert!((f.iter().map(|x| x.probability).sum::<f64>() - 1.0).abs() <= 1e-9);
        // straight option first
        assert_eq!(f[0].routes[0], vec![0, 1]);
        assert_eq!(f[1].routes[0], vec![0, 2]);
        let a = f[0].trajectories[0].last().unwrap().position();
        let b = f[1].trajectories[0].last().unwrap().position();
        assert!(a.distance(b) > 1.0);
        // lateral deviation along the chosen path
        for fut in &f {
            let pts: Vec<Vec2> = fut.routes[0]
                .iter()
                .flat_map(|&e| map.edges[e].geometry.waypoints().to_vec())
                .collect();
            for st in &fut.trajectories[0] {
                let d = project_onto_polyline(&pts, st.position()).unwrap().distance;
                assert!(d <= 1.0, "{d}");
            }
        }
    }

    #[test]
    fn zero_agents_give_k_empty_futures() {
        let lanes = fork();
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let f = rollout(&scene(lanes, vec![]), &map, &RolloutConfig::default()).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|x| x.trajectories.is_empty() && (x.probability - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn horizon_shorter_than_dt() {
        let lanes = fork();
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let cfg = RolloutConfig {
            horizon: 0.05,
            ..Default::default()
        };
        assert!(matches!(rollout(&scene(lanes, vec![]), &map, &cfg), Err(SimError::HorizonTooShort { .. })));
    }

    #[test]
    fn unassigned_agent_keeps_velocity() {
        let lanes = fork();
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let s = scene(lanes, vec![car(0.0, 30.0, PI / 4.0, 5.0)]);
        let f = rollout(&s, &map, &RolloutConfig::default()).unwrap();
        let end = f[0].trajectories[0].last().unwrap();
        let expect = Vec2::new(0.0, 30.0) + Vec2::from_angle(PI / 4.0) * 40.0;
        assert!(end.position().distance(expect) < 1e-9);
        assert!(f[0].routes[0].is_empty());
    }

    #[test]
    fn tight_turn_stays_within_a_meter() {
        // radius 5 m: the tightest connector the curvature gate admits
        let mut pts = vec![Vec2::new(-40.0, 0.0)];
        pts.extend(arc(Vec2::new(0.0, 5.0), 5.0, -PI / 2.0, 0.0).into_waypoints());
        pts.push(Vec2::new(5.0, 40.0));
        let lanes = vec![Centerline::new(pts.clone()).unwrap()];
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        for v in [2.0, 8.0, 15.0, 30.0] {
            let s = scene(lanes.clone(), vec![car(-30.0, 0.0, 0.0, v)]);
            let cfg = RolloutConfig {
                horizon: 3.0,
                ..Default::default()
            };
            let f = rollout(&s, &map, &cfg).unwrap();
            // past the lane end the path continues straight
            let asg = assign_lane(&s.agents[0].initial_state, &map).unwrap();
            let path = plan_path(&map, &asg, 0, v * cfg.horizon + 10.0);
            for st in &f[0].trajectories[0] {
                let d = project_onto_polyline(&path.points, st.position()).unwrap().distance;
                assert!(d <= 1.0, "v={v}: {d}");
            }
        }
    }

    #[test]
    fn future_scenarios_carry_trajectories() {
        let lanes = fork();
        let map = LaneGraph::from_centerlines(&lanes, 0.1);
        let s = scene(lanes, vec![car(-40.0, 0.0, 0.0, 8.0)]);
        let f = rollout(&s, &map, &RolloutConfig::default()).unwrap();
        let out = future_scenarios(&s, &f, 0.1);
        assert_eq!(out.len(), 2);
        for sc in &out {
            sc.validate().unwrap();
            assert_eq!(sc.agents[0].trajectory.as_ref().unwrap().len(), 81);
        }
    }
}
