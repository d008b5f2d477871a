//! GEO and TOPO precision/recall between lane graphs.
//!
//! Both graphs are densified at a fixed spacing. GEO pairs vertices one to
//! one below a distance threshold. TOPO repeats the GEO computation inside
//! the path-distance neighbourhoods of every matched pair and averages.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{resample_polyline, Vec2};
use crate::scenario::Centerline;

pub const DEFAULT_SPACING: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 1.5;
pub const DEFAULT_RADIUS: f64 = 50.0;
/// Lane ends closer than this are treated as the same graph vertex.
pub const DEFAULT_JOIN_TOL: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{which} graph has no vertices")]
    EmptyGraph { which: &'static str },
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub spacing: f64,
    pub threshold: f64,
    pub radius: f64,
    pub join_tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            spacing: DEFAULT_SPACING,
            threshold: DEFAULT_THRESHOLD,
            radius: DEFAULT_RADIUS,
            join_tol: DEFAULT_JOIN_TOL,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), MetricsError> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(MetricsError::InvalidParameter("spacing must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(MetricsError::InvalidParameter("threshold must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(MetricsError::InvalidParameter("subgraph radius must be positive"));
        }
        if !(self.join_tol >= 0.0) {
            return Err(MetricsError::InvalidParameter("join tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Densified lane graph: vertices every `spacing` meters along each lane,
/// linked to their along-path neighbours. Lane ends within the join
/// tolerance share one vertex.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterpolatedGraph {
    pub points: Vec<Vec2>,
    /// Index of the lane each vertex was generated from (the first lane for
    /// shared end vertices).
    pub lane_of: Vec<usize>,
    /// Undirected neighbour lists with segment lengths.
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl InterpolatedGraph {
    pub fn from_centerlines(lanes: &[Centerline], spacing: f64, join_tol: f64) -> Self {
        let mut g = InterpolatedGraph::default();
        let mut ends: Vec<usize> = Vec::new();
        let mut end_vertex = |g: &mut InterpolatedGraph, p: Vec2, lane: usize| -> usize {
            if let Some(&v) = ends.iter().find(|&&v| g.points[v].distance(p) <= join_tol) {
                return v;
            }
            let v = g.push(p, lane);
            ends.push(v);
            v
        };
        for (li, lane) in lanes.iter().enumerate() {
            let pts = resample_polyline(lane.waypoints(), spacing);
            let first = end_vertex(&mut g, pts[0], li);
            let mut prev = first;
            let last_idx = pts.len() - 1;
            for (k, &p) in pts.iter().enumerate().skip(1) {
                let v = if k == last_idx { end_vertex(&mut g, p, li) } else { g.push(p, li) };
                if v != prev {
                    g.link(prev, v);
                }
                prev = v;
            }
        }
        g
    }

    fn push(&mut self, p: Vec2, lane: usize) -> usize {
        self.points.push(p);
        self.lane_of.push(lane);
        self.adjacency.push(Vec::new());
        self.points.len() - 1
    }

    fn link(&mut self, a: usize, b: usize) {
        let d = self.points[a].distance(self.points[b]);
        if !self.adjacency[a].iter().any(|&(n, _)| n == b) {
            self.adjacency[a].push((b, d));
            self.adjacency[b].push((a, d));
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Vertices within path distance `radius` of `source`, edges taken as
    /// undirected.
    pub fn within(&self, source: usize, radius: f64) -> Vec<usize> {
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(source, 0.0);
        heap.push(Item(0.0, source));
        while let Some(Item(d, v)) = heap.pop() {
            if d > dist[&v] {
                continue;
            }
            for &(n, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd <= radius + 1e-9 && dist.get(&n).is_none_or(|&old| nd < old) {
                    dist.insert(n, nd);
                    heap.push(Item(nd, n));
                }
            }
        }
        let mut out: Vec<usize> = dist.into_keys().collect();
        out.sort_unstable();
        out
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Candidate pair `(distance, gt vertex, predicted vertex)`.
pub type Candidate = (f64, usize, usize);

/// All pairs closer than `threshold`, sorted by distance with ties broken by
/// gt then predicted index.
pub fn candidate_pairs(gt: &InterpolatedGraph, pred: &InterpolatedGraph, threshold: f64) -> Vec<Candidate> {
    let cell = threshold.max(1e-9);
    let key = |p: Vec2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, p) in pred.points.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(j);
    }
    let mut out: Vec<Candidate> = gt
        .points
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            let (cx, cy) = key(*p);
            let mut local = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(js) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in js {
                            let d = p.distance(pred.points[j]);
                            if d < threshold {
                                local.push((d, i, j));
                            }
                        }
                    }
                }
            }
            local
        })
        .collect();
    out.sort_by(cmp_candidate);
    out
}

fn cmp_candidate(a: &Candidate, b: &Candidate) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Greedy one-to-one matching over sorted candidates.
fn greedy<'a>(candidates: impl Iterator<Item = &'a Candidate>, n_gt: usize, n_pred: usize) -> Vec<(usize, usize)> {
    let mut gt_used = vec![false; n_gt];
    let mut pred_used = vec![false; n_pred];
    let mut pairs = Vec::new();
    for &(_, i, j) in candidates {
        if gt_used[i] || pred_used[j] {
            continue;
        }
        gt_used[i] = true;
        pred_used[j] = true;
        pairs.push((i, j));
    }
    pairs
}

/// One-to-one matching built greedily by ascending pair distance among
/// pairs closer than `threshold`. Returns `(gt, pred)` index pairs.
pub fn match_vertices(gt: &InterpolatedGraph, pred: &InterpolatedGraph, threshold: f64) -> Vec<(usize, usize)> {
    let c = candidate_pairs(gt, pred, threshold);
    greedy(c.iter(), gt.len(), pred.len())
}

fn check_nonempty(gt: &InterpolatedGraph, pred: &InterpolatedGraph) -> Result<(), MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGraph { which: "ground-truth" });
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyGraph { which: "predicted" });
    }
    Ok(())
}

/// `(precision, recall)` at the vertex level.
pub fn geo_score(gt: &InterpolatedGraph, pred: &InterpolatedGraph, threshold: f64) -> Result<(f64, f64), MetricsError> {
    check_nonempty(gt, pred)?;
    let m = match_vertices(gt, pred, threshold).len() as f64;
    Ok((m / pred.len() as f64, m / gt.len() as f64))
}

/// `(precision, recall)` of GEO scores over the path-distance subgraphs of
/// every matched pair, normalized by the predicted and gt vertex counts.
pub fn topo_score(
    gt: &InterpolatedGraph,
    pred: &InterpolatedGraph,
    threshold: f64,
    radius: f64,
) -> Result<(f64, f64), MetricsError> {
    check_nonempty(gt, pred)?;
    if !(radius > 0.0) {
        return Err(MetricsError::InvalidParameter("subgraph radius must be positive"));
    }
    let candidates = candidate_pairs(gt, pred, threshold);
    let matched = greedy(candidates.iter(), gt.len(), pred.len());
    Ok(topo_from(gt, pred, &candidates, &matched, radius))
}

fn topo_from(
    gt: &InterpolatedGraph,
    pred: &InterpolatedGraph,
    candidates: &[Candidate],
    matched: &[(usize, usize)],
    radius: f64,
) -> (f64, f64) {
    // candidates grouped by gt vertex, each group already sorted
    let mut by_gt: Vec<Vec<Candidate>> = vec![Vec::new(); gt.len()];
    for c in candidates {
        by_gt[c.1].push(*c);
    }
    // collected first so the sums run in a fixed order
    let parts: Vec<(f64, f64)> = matched
        .par_iter()
        .map(|&(v, vh)| {
            let s = gt.within(v, radius);
            let sh = pred.within(vh, radius);
            let mut in_sh = vec![false; pred.len()];
            for &j in &sh {
                in_sh[j] = true;
            }
            let mut local: Vec<Candidate> = s
                .iter()
                .flat_map(|&i| by_gt[i].iter().copied().filter(|c| in_sh[c.2]))
                .collect();
            local.sort_by(cmp_candidate);
            let m = greedy(local.iter(), gt.len(), pred.len()).len() as f64;
            (m / sh.len() as f64, m / s.len() as f64)
        })
        .collect();
    let (p_sum, r_sum) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    (p_sum / pred.len() as f64, r_sum / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrecisionRecall {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTopoScore {
    pub geo: PrecisionRecall,
    pub topo: PrecisionRecall,
    pub matched_count: usize,
    pub gt_vertices: usize,
    pub pred_vertices: usize,
}

/// Full evaluation of predicted against ground-truth centerlines.
pub fn evaluate(gt: &[Centerline], pred: &[Centerline], cfg: &EvalConfig) -> Result<GeoTopoScore, MetricsError> {
    cfg.validate()?;
    let g = InterpolatedGraph::from_centerlines(gt, cfg.spacing, cfg.join_tol);
    let p = InterpolatedGraph::from_centerlines(pred, cfg.spacing, cfg.join_tol);
    evaluate_graphs(&g, &p, cfg)
}

pub fn evaluate_graphs(
    gt: &InterpolatedGraph,
    pred: &InterpolatedGraph,
    cfg: &EvalConfig,
) -> Result<GeoTopoScore, MetricsError> {
    cfg.validate()?;
    check_nonempty(gt, pred)?;
    let candidates = candidate_pairs(gt, pred, cfg.threshold);
    let matched = greedy(candidates.iter(), gt.len(), pred.len());
    let m = matched.len() as f64;
    let geo = PrecisionRecall::new(m / pred.len() as f64, m / gt.len() as f64);
    let (tp, tr) = topo_from(gt, pred, &candidates, &matched, cfg.radius);
    Ok(GeoTopoScore {
        geo,
        topo: PrecisionRecall::new(tp, tr),
        matched_count: matched.len(),
        gt_vertices: gt.len(),
        pred_vertices: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lane(pts: &[(f64, f64)]) -> Centerline {
        Centerline::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn shifted(lanes: &[Centerline], d: Vec2) -> Vec<Centerline> {
        lanes
            .iter()
            .map(|l| Centerline::new(l.waypoints().iter().map(|p| *p + d).collect()).unwrap())
            .collect()
    }

    fn graph(lanes: &[Centerline]) -> InterpolatedGraph {
        InterpolatedGraph::from_centerlines(lanes, 0.5, 0.1)
    }

    /// Four-way junction with through lanes and two turns.
    fn junction() -> Vec<Centerline> {
        vec![
            lane(&[(-30.0, 0.0), (-8.0, 0.0)]),
            lane(&[(-8.0, 0.0), (8.0, 0.0)]),
            lane(&[(8.0, 0.0), (30.0, 0.0)]),
            lane(&[(0.0, -30.0), (0.0, -8.0)]),
            lane(&[(0.0, -8.0), (0.0, 8.0)]),
            lane(&[(0.0, 8.0), (0.0, 30.0)]),
            lane(&[(-8.0, 0.0), (-3.0, 0.5), (-0.5, 3.0), (0.0, 8.0)]),
            lane(&[(0.0, -8.0), (0.5, -3.0), (3.0, -0.5), (8.0, 0.0)]),
        ]
    }

    #[test]
    fn interpolation_spacing_and_shared_ends() {
        let lanes = vec![lane(&[(0.0, 0.0), (10.2, 0.0)]), lane(&[(10.2, 0.0), (10.2, 3.0)])];
        let g = graph(&lanes);
        // 0..10.2 at 0.5 gives 22 points, the second lane adds 6 more
        assert_eq!(g.len(), 22 + 6);
        for v in 0..g.len() {
            for &(_, d) in &g.adjacency[v] {
                assert!(d <= 0.5 + 1e-12);
            }
        }
        let shared = g.points.iter().position(|p| p.distance(Vec2::new(10.2, 0.0)) < 1e-12).unwrap();
        assert_eq!(g.adjacency[shared].len(), 2);
        assert_eq!(g.within(0, 1000.0).len(), g.len());
    }

    #[test]
    fn identical_graphs_match_perfectly() {
        let g = graph(&junction());
        let m = match_vertices(&g, &g, 1.5);
        assert_eq!(m.len(), g.len());
        let s = evaluate(&junction(), &junction(), &EvalConfig::default()).unwrap();
        for v in [s.geo.precision, s.geo.recall, s.geo.f1, s.topo.precision, s.topo.recall, s.topo.f1] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn shift_against_threshold() {
        let lanes = vec![lane(&[(-20.0, 0.0), (20.0, 0.0)])];
        let g = graph(&lanes);
        let far = graph(&shifted(&lanes, Vec2::new(0.0, 2.0)));
        assert!(match_vertices(&g, &far, 1.5).is_empty());
        let near = graph(&shifted(&lanes, Vec2::new(0.0, 1.0)));
        assert_eq!(match_vertices(&g, &near, 1.5).len(), g.len());
    }

    /// Brute-force greedy: repeatedly take the globally closest free pair.
    fn brute_greedy(g: &InterpolatedGraph, p: &InterpolatedGraph, thr: f64) -> usize {
        let mut gu = vec![false; g.len()];
        let mut pu = vec![false; p.len()];
        let mut count = 0;
        loop {
            let mut best: Option<Candidate> = None;
            for i in 0..g.len() {
                for j in 0..p.len() {
                    if gu[i] || pu[j] {
                        continue;
                    }
                    let d = g.points[i].distance(p.points[j]);
                    if d < thr && best.is_none_or(|b| cmp_candidate(&(d, i, j), &b) == Ordering::Less) {
                        best = Some((d, i, j));
                    }
                }
            }
            let Some((_, i, j)) = best else { return count };
            gu[i] = true;
            pu[j] = true;
            count += 1;
        }
    }

    #[test]
    fn greedy_matches_brute_force() {
        let g = graph(&junction());
        for (k, d) in [(0.3, 0.2), (1.0, 0.0), (0.7, -0.9), (1.2, 0.6)].into_iter().enumerate() {
            let p = graph(&shifted(&junction()[..5 + k % 3], Vec2::new(d.0, d.1)));
            assert_eq!(match_vertices(&g, &p, 1.5).len(), brute_greedy(&g, &p, 1.5));
        }
    }

    #[test]
    fn half_the_edges() {
        let lanes = vec![lane(&[(-20.0, 10.0), (20.0, 10.0)]), lane(&[(20.0, -10.0), (-20.0, -10.0)])];
        let (p, r) = geo_score(&graph(&lanes), &graph(&lanes[..1]), 1.5).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(r, 0.5);
    }

    #[test]
    fn disjoint_and_empty() {
        let a = graph(&[lane(&[(-20.0, 10.0), (20.0, 10.0)])]);
        let b = graph(&[lane(&[(-20.0, -10.0), (20.0, -10.0)])]);
        assert_eq!(geo_score(&a, &b, 1.5).unwrap(), (0.0, 0.0));
        assert_eq!(topo_score(&a, &b, 1.5, 50.0).unwrap(), (0.0, 0.0));
        let e = InterpolatedGraph::default();
        assert!(matches!(geo_score(&e, &b, 1.5), Err(MetricsError::EmptyGraph { .. })));
        assert!(matches!(topo_score(&a, &e, 1.5, 50.0), Err(MetricsError::EmptyGraph { .. })));
    }

    #[test]
    fn missing_turn_hurts_topo_more_than_geo() {
        let gt = junction();
        // same vertices except for the left turn
        let pred: Vec<Centerline> = gt.iter().take(6).cloned().chain(std::iter::once(gt[7].clone())).collect();
        let cfg = EvalConfig::default();
        let s = evaluate(&gt, &pred, &cfg).unwrap();
        assert_eq!(s.geo.precision, 1.0);
        assert!(s.topo.recall < s.geo.recall, "{s:?}");

        // hand computation of the subgraph terms on a small instance: a
        // 3-vertex path against its first two vertices with r covering all
        let g = graph(&[lane(&[(0.0, 0.0), (1.0, 0.0)])]);
        let p = graph(&[lane(&[(0.0, 0.0), (0.5, 0.0)])]);
        assert_eq!(g.len(), 3);
        assert_eq!(p.len(), 2);
        let (tp, tr) = topo_score(&g, &p, 0.2, 50.0).unwrap();
        // two matched pairs, each subgraph GEO is (2/2, 2/3)
        assert!((tp - 2.0 * 1.0 / 2.0).abs() < 1e-12);
        assert!((tr - 2.0 * (2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_swaps_precision_and_recall() {
        let a = graph(&junction());
        let b = graph(&shifted(&junction()[2..], Vec2::new(0.4, -0.3)));
        let (p1, r1) = geo_score(&a, &b, 1.5).unwrap();
        let (p2, r2) = geo_score(&b, &a, 1.5).unwrap();
        assert_eq!((p1, r1), (r2, p2));
    }

    #[test]
    fn invalid_config() {
        let l = junction();
        let cfg = EvalConfig {
            radius: 0.0,
            ..Default::default()
        };
        assert!(matches!(evaluate(&l, &l, &cfg), Err(MetricsError::InvalidParameter(_))));
    }

    fn arb_lanes() -> impl Strategy<Value = Vec<Centerline>> {
        prop::collection::vec(
            (-30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64)
                .prop_filter("non-degenerate", |(a, b, c, d)| (a - c).hypot(b - d) > 1.0)
                .prop_map(|(a, b, c, d)| lane(&[(a, b), (c, d)])),
            1..5,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scores_in_unit_range(gt in arb_lanes(), pred in arb_lanes()) {
            let s = evaluate(&gt, &pred, &EvalConfig::default()).unwrap();
            for v in [s.geo.precision, s.geo.recall, s.geo.f1, s.topo.precision, s.topo.recall, s.topo.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let id = evaluate(&gt, &gt, &EvalConfig::default()).unwrap();
            prop_assert!((id.geo.f1 - 1.0).abs() <= 1e-9 && (id.topo.f1 - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn exact_vertex_never_lowers_recall(gt in arb_lanes(), pred in arb_lanes(), pick in 0usize..1000) {
            let g = graph(&gt);
            let mut p = graph(&pred);
            let (_, before) = geo_score(&g, &p, 1.5).unwrap();
            let at = g.points[pick % g.len()];
            p.push(at, usize::MAX);
            let (_, after) = geo_score(&g, &p, 1.5).unwrap();
            prop_assert!(after >= before);
        }
    }
}
