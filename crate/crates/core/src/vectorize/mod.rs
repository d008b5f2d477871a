//! Graph-based vectorization of a feature map into a directed lane graph.
//!
//! Stages: skeleton graph, entry/exit labeling of terminals and their
//! branching neighbors from decoded directions, directed approach edges,
//! and Bézier connectors between entry and exit vertices that are joined by a
//! path through the remaining (intersection) part of the skeleton graph.

pub mod bezier;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::debug;
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{extract_agents, AgentConfig};
use crate::geometry::{cumulative_lengths, point_at_arc_length, resample_polyline, smooth_polyline, Vec2};
use crate::raster::{decode_direction, FeatureMap, RasterGeometry};
use crate::scenario::{Centerline, Scenario, ScenarioError, Waypoint};
use crate::skeleton::{extract_edges_vertices, skeletonize_with, Pixel, PixelGraph, DEFAULT_SPUR_LENGTH};

use bezier::{end_tangents, fit_and_score, free_fit_tangents, BezierFit};

/// Chain pixels used to estimate an edge tangent at a vertex.
const TANGENT_REACH_PX: usize = 6;
/// Below this `|direction . tangent|` the vertex pixel alone is not trusted
/// and the decoded directions along the chain decide.
const WEAK_ALIGNMENT: f64 = 0.25;
/// Approach tangents use the chord from `APPROACH_REACH_M` to
/// `APPROACH_SKIP_M` before the vertex.
const APPROACH_REACH_M: f64 = 5.0;
const APPROACH_SKIP_M: f64 = 1.0;
/// Chain pixels used for the line through a terminal.
const END_FIT_PX: usize = 12;
/// Distance, in strokes, from the last lane pixel back to the lane end.
const END_CAP_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum VectorizeError {
    #[error("feature map has no lane pixels")]
    EmptyMap,
    #[error("vertex at pixel ({col}, {row}) decodes to background")]
    MissingDirection { col: usize, row: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorizeConfig {
    /// Maximum connector curvature, 1/m.
    pub k_thresh: f64,
    /// Minimum connector IoU against its skeleton path.
    pub min_iou: f64,
    /// Stroke width (pixels) used to rasterize curves for the IoU gate.
    pub stroke: usize,
    /// Output waypoint spacing, meters.
    pub spacing: f64,
    pub spur_length: usize,
    /// Half window (in chain pixels) of the moving average applied to
    /// approach edges.
    pub smoothing: usize,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        Self {
            k_thresh: 0.2,
            min_iou: 0.5,
            stroke: crate::raster::DEFAULT_STROKE,
            spacing: 0.5,
            spur_length: DEFAULT_SPUR_LENGTH,
            smoothing: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VertexLabel {
    #[default]
    Unlabeled,
    /// Traffic enters the intersection region (or the map) here.
    Entry,
    /// Traffic leaves the intersection region (or the map) here.
    Exit,
    /// A branching vertex that is the end of one approach and the start of
    /// another, e.g. the meeting point of a merge.
    Through,
}

impl VertexLabel {
    pub fn is_entry(self) -> bool {
        matches!(self, VertexLabel::Entry | VertexLabel::Through)
    }

    pub fn is_exit(self) -> bool {
        matches!(self, VertexLabel::Exit | VertexLabel::Through)
    }

    pub fn swapped(self) -> VertexLabel {
        match self {
            VertexLabel::Entry => VertexLabel::Exit,
            VertexLabel::Exit => VertexLabel::Entry,
            x => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneVertex {
    pub position: Waypoint,
    /// Decoded unit direction, zero when unknown.
    pub direction: Vec2,
    pub label: VertexLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Skeleton chain from a terminal to its branching vertex (or between
    /// two terminals).
    Approach,
    /// Fitted intersection curve from an entry to an exit.
    Connector,
    /// Lane given directly as a centerline.
    Lane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdge {
    pub from: usize,
    pub to: usize,
    pub geometry: Centerline,
    pub kind: EdgeKind,
    pub fit: Option<BezierFit>,
}

/// Directed lane graph; edge geometry starts at the `from` vertex position
/// and ends at the `to` vertex position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneGraph {
    pub vertices: Vec<LaneVertex>,
    pub edges: Vec<DirectedEdge>,
}

impl LaneGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn centerlines(&self) -> Vec<Centerline> {
        self.edges.iter().map(|e| e.geometry.clone()).collect()
    }

    pub fn out_edges(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].from == v).collect()
    }

    pub fn successors(&self, edge: usize) -> Vec<usize> {
        self.out_edges(self.edges[edge].to)
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.from == v).count()
    }

    /// Drops vertices without edges and renumbers the rest in order.
    pub fn compacted(&self) -> LaneGraph {
        let mut used = vec![false; self.vertices.len()];
        for e in &self.edges {
            used[e.from] = true;
            used[e.to] = true;
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if used[i] {
                remap[i] = vertices.len();
                vertices.push(v.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .map(|e| DirectedEdge {
                from: remap[e.from],
                to: remap[e.to],
                ..e.clone()
            })
            .collect();
        LaneGraph { vertices, edges }
    }

    /// Graph over explicit centerlines: lane ends closer than `join_tol`
    /// meters share a vertex.
    pub fn from_centerlines(lanes: &[Centerline], join_tol: f64) -> LaneGraph {
        let mut g = LaneGraph::default();
        let vertex_at = |g: &mut LaneGraph, p: Vec2, d: Vec2| -> usize {
            if let Some(i) = g.vertices.iter().position(|v| v.position.distance(p) <= join_tol) {
                return i;
            }
            g.vertices.push(LaneVertex {
                position: p,
                direction: d,
                label: VertexLabel::Unlabeled,
            });
            g.vertices.len() - 1
        };
        for lane in lanes {
            let dirs = lane.directions();
            let from = vertex_at(&mut g, lane.first(), dirs[0]);
            let to = vertex_at(&mut g, lane.last(), *dirs.last().unwrap());
            g.edges.push(DirectedEdge {
                from,
                to,
                geometry: lane.clone(),
                kind: EdgeKind::Lane,
                fit: None,
            });
        }
        g
    }
}

/// One terminal-to-branching (or terminal-to-terminal) edge oriented along
/// the driving direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Approach {
    pub edge: usize,
    pub from: usize,
    pub to: usize,
}

/// Pixel graph with per-vertex labels and decoded directions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub graph: PixelGraph,
    pub labels: Vec<VertexLabel>,
    /// World-frame unit directions, zero where nothing decodes.
    pub directions: Vec<Vec2>,
    pub approaches: Vec<Approach>,
}

/// Undirected remainder after the approach edges and terminals are removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub removed: Vec<bool>,
    pub edges: Vec<usize>,
}

impl Residual {
    pub fn vertex_count(&self) -> usize {
        self.removed.iter().filter(|r| !**r).count()
    }
}

fn raw_direction(fm: &FeatureMap, c: usize, r: usize) -> Vec2 {
    Vec2::new(2.0 * fm.get(0, c, r) as f64 - 1.0, 2.0 * fm.get(1, c, r) as f64 - 1.0)
}

/// Direction at a vertex: mean decoded direction over its pixels, falling
/// back to the mean over their 3x3 windows.
fn vertex_direction(fm: &FeatureMap, pixels: &[Pixel]) -> Option<Vec2> {
    let mut acc = Vec2::ZERO;
    for &(c, r) in pixels {
        if let Some(d) = decode_direction(fm, c, r) {
            acc += d;
        }
    }
    if let Some(d) = acc.normalized() {
        return Some(d);
    }
    let (w, h) = (fm.width() as isize, fm.height() as isize);
    let mut acc = Vec2::ZERO;
    for &(c, r) in pixels {
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (nc, nr) = (c as isize + dc, r as isize + dr);
                if nc >= 0 && nr >= 0 && nc < w && nr < h {
                    if let Some(d) = decode_direction(fm, nc as usize, nr as usize) {
                        acc += d;
                    }
                }
            }
        }
    }
    acc.normalized()
}

fn pixel_vec(a: Pixel, b: Pixel) -> Vec2 {
    Vec2::new(b.0 as f64 - a.0 as f64, b.1 as f64 - a.1 as f64)
}

/// World-frame unit tangent of a chain leaving its first pixel.
fn chain_tangent(chain: &[Pixel]) -> Option<Vec2> {
    let k = TANGENT_REACH_PX.min(chain.len() - 1);
    RasterGeometry::pixel_dir_to_world(pixel_vec(chain[0], chain[k])).normalized()
}

/// Sum of decoded-direction projections on the chain steps, positive when
/// the chain order agrees with the encoded flow.
fn chain_flow(fm: &FeatureMap, chain: &[Pixel]) -> f64 {
    chain
        .windows(2)
        .map(|w| {
            let step = RasterGeometry::pixel_dir_to_world(pixel_vec(w[0], w[1]));
            raw_direction(fm, w[0].0, w[0].1).dot(step)
        })
        .sum()
}

/// Assigns entry/exit labels to terminal vertices and their branching
/// neighbors, and orients every terminal edge along the decoded flow.
pub fn label_terminals(pg: PixelGraph, fm: &FeatureMap) -> Result<LabeledGraph, VectorizeError> {
    let n = pg.vertices.len();
    let mut directions = vec![Vec2::ZERO; n];
    for (i, v) in pg.vertices.iter().enumerate() {
        match vertex_direction(fm, &v.pixels) {
            Some(d) => directions[i] = d,
            None if v.degree == 1 => {
                let (col, row) = v.pixels[0];
                return Err(VectorizeError::MissingDirection { col, row });
            }
            None => {}
        }
    }

    // flow evidence for leaving vertex `v` along chain `chain`
    let end_score = |v: usize, chain: &[Pixel]| -> f64 {
        chain_tangent(chain).map_or(0.0, |t| directions[v].dot(t))
    };

    let mut approaches = Vec::new();
    for (ei, e) in pg.edges.iter().enumerate() {
        if e.a == e.b {
            continue;
        }
        let ta = pg.vertices[e.a].degree == 1;
        let tb = pg.vertices[e.b].degree == 1;
        if !ta && !tb {
            continue;
        }
        let forward = e.pixels.clone();
        let backward: Vec<Pixel> = forward.iter().rev().copied().collect();
        let mut score = match (ta, tb) {
            (true, true) => end_score(e.a, &forward) - end_score(e.b, &backward),
            (true, false) => end_score(e.a, &forward),
            _ => -end_score(e.b, &backward),
        };
        if score.abs() < WEAK_ALIGNMENT {
            score = chain_flow(fm, &forward);
        }
        let (from, to) = if score > 0.0 { (e.a, e.b) } else { (e.b, e.a) };
        approaches.push(Approach { edge: ei, from, to });
    }

    // Terminals are entries when traffic leaves them. A branching vertex is
    // an entry when an approach flows into it (traffic enters the
    // intersection there) and an exit when an approach flows out of it.
    let labels = (0..n)
        .map(|i| {
            let entering = approaches.iter().any(|a| a.to == i);
            let leaving = approaches.iter().any(|a| a.from == i);
            if pg.vertices[i].degree == 1 {
                return if leaving { VertexLabel::Entry } else { VertexLabel::Exit };
            }
            match (entering, leaving) {
                (true, true) => VertexLabel::Through,
                (true, false) => VertexLabel::Entry,
                (false, true) => VertexLabel::Exit,
                (false, false) => VertexLabel::Unlabeled,
            }
        })
        .collect();
    Ok(LabeledGraph {
        graph: pg,
        labels,
        directions,
        approaches,
    })
}

/// Thinning leaves terminals short of the drawn lane end. March outward
/// along the chain tangent to the edge of the stroke and step back by the
/// stroke cap; a stroke cut by the raster border ends at the border pixel.
fn terminal_end(fm: &FeatureMap, pg: &PixelGraph, v: usize, edge: usize, stroke: f64) -> Vec2 {
    let chain = pg.edges[edge].pixels_from(v);
    let Some((center, out)) = end_line(&chain, END_FIT_PX) else {
        return pg.vertices[v].center;
    };
    let (w, h) = (fm.width() as f64, fm.height() as f64);
    let step = 0.25;
    let mut last_inside = 0.0;
    let mut s = step;
    loop {
        let p = center + out * s;
        let (c, r) = (p.x.round(), p.y.round());
        if c < 0.0 || r < 0.0 || c >= w || r >= h {
            return center + out * last_inside;
        }
        if decode_direction(fm, c as usize, r as usize).is_none() {
            break;
        }
        last_inside = s;
        s += step;
        if s > 4.0 * stroke + 8.0 {
            break;
        }
    }
    center + out * (last_inside - END_CAP_FRACTION * stroke).max(0.0)
}

/// Principal-axis line through the first `n` pixels of a chain, as the
/// projection of the first pixel and the unit direction pointing away from
/// the rest of the chain.
fn end_line(chain: &[Pixel], n: usize) -> Option<(Vec2, Vec2)> {
    let pts: Vec<Vec2> = chain.iter().take(n.max(2)).map(|&(c, r)| Vec2::new(c as f64, r as f64)).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.iter().fold(Vec2::ZERO, |acc, p| acc + *p) * (1.0 / pts.len() as f64);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let d = *p - m;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut axis = Vec2::from_angle(theta);
    if axis.dot(pts[0] - *pts.last().unwrap()) < 0.0 {
        axis = -axis;
    }
    let start = m + axis * (pts[0] - m).dot(axis);
    Some((start, axis))
}

fn vertex_position(fm: &FeatureMap, pg: &PixelGraph, incidence: &[Vec<usize>], v: usize, stroke: f64) -> Vec2 {
    let px = if pg.vertices[v].degree == 1 && incidence[v].len() == 1 {
        terminal_end(fm, pg, v, incidence[v][0], stroke)
    } else {
        pg.vertices[v].center
    };
    fm.geometry().pixel_to_world(px)
}

/// World polyline of a pixel chain with its end pixels replaced by the
/// positions of the vertices they belong to.
fn chain_to_world(geometry: &RasterGeometry, chain: &[Pixel], start: Vec2, end: Vec2) -> Vec<Vec2> {
    let mut pts = Vec::with_capacity(chain.len());
    pts.push(start);
    if chain.len() > 2 {
        for &(c, r) in &chain[1..chain.len() - 1] {
            pts.push(geometry.pixel_center(c, r));
        }
    }
    pts.push(end);
    pts
}

fn polyline_to_centerline(points: &[Vec2], spacing: f64) -> Option<Centerline> {
    Centerline::from_points_dedup(&resample_polyline(points, spacing))
}

/// Moves every terminal edge into the directed graph and returns the
/// undirected remainder.
pub fn extract_approach_edges(lg: &LabeledGraph, fm: &FeatureMap, cfg: &VectorizeConfig) -> (LaneGraph, Residual) {
    let geometry = fm.geometry();
    let pg = &lg.graph;
    let incidence = pg.incidence();
    let vertices = (0..pg.vertices.len())
        .map(|i| LaneVertex {
            position: vertex_position(fm, pg, &incidence, i, cfg.stroke as f64),
            direction: lg.directions[i],
            label: lg.labels[i],
        })
        .collect::<Vec<_>>();
    let mut graph = LaneGraph {
        vertices,
        edges: Vec::new(),
    };
    let mut in_approach = vec![false; pg.edges.len()];
    for a in &lg.approaches {
        in_approach[a.edge] = true;
        let chain = pg.edges[a.edge].pixels_from(a.from);
        let pts = chain_to_world(
            geometry,
            &chain,
            graph.vertices[a.from].position,
            graph.vertices[a.to].position,
        );
        let pts = smooth_polyline(&pts, cfg.smoothing);
        if let Some(geometry) = polyline_to_centerline(&pts, cfg.spacing) {
            graph.edges.push(DirectedEdge {
                from: a.from,
                to: a.to,
                geometry,
                kind: EdgeKind::Approach,
                fit: None,
            });
        }
    }
    let removed = pg.vertices.iter().map(|v| v.degree == 1).collect();
    let edges = (0..pg.edges.len()).filter(|&i| !in_approach[i]).collect();
    (graph, Residual { removed, edges })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    cost: f64,
    vertex: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then_with(|| o.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Single-source shortest paths over the residual; returns per-vertex
/// `(distance, previous vertex, edge)`.
fn dijkstra(adj: &[Vec<(usize, usize, f64)>], source: usize) -> Vec<(f64, usize, usize)> {
    let mut best = vec![(f64::INFINITY, usize::MAX, usize::MAX); adj.len()];
    best[source].0 = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem {
        cost: 0.0,
        vertex: source,
    });
    while let Some(HeapItem { cost, vertex }) = heap.pop() {
        if cost > best[vertex].0 {
            continue;
        }
        for &(next, edge, w) in &adj[vertex] {
            let c = cost + w;
            if c < best[next].0 {
                best[next] = (c, vertex, edge);
                heap.push(HeapItem { cost: c, vertex: next });
            }
        }
    }
    best
}

/// Driving direction of an approach at its start or end, from a chord that
/// skips the stretch next to the vertex, where the skeleton bends into the
/// junction blob.
fn approach_tangent(points: &[Vec2], at_end: bool) -> Option<Vec2> {
    let cum = cumulative_lengths(points);
    let total = *cum.last()?;
    if total <= 0.0 {
        return None;
    }
    let near = APPROACH_SKIP_M.min(0.2 * total);
    let far = APPROACH_REACH_M.min(total);
    if at_end {
        (point_at_arc_length(points, &cum, total - near) - point_at_arc_length(points, &cum, total - far)).normalized()
    } else {
        (point_at_arc_length(points, &cum, far) - point_at_arc_length(points, &cum, near)).normalized()
    }
}

fn mean_direction(dirs: impl Iterator<Item = Vec2>) -> Option<Vec2> {
    let mut acc = Vec2::ZERO;
    for d in dirs {
        acc += d;
    }
    acc.normalized()
}

/// Fits a Bézier connector for every (entry, exit) pair joined by a residual
/// path and adds those that pass the IoU and curvature gates.
pub fn fit_intersection_curves(
    lg: &LabeledGraph,
    residual: &Residual,
    mut graph: LaneGraph,
    geometry: &RasterGeometry,
    cfg: &VectorizeConfig,
) -> LaneGraph {
    let pg = &lg.graph;
    let n = pg.vertices.len();
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for &ei in &residual.edges {
        let e = &pg.edges[ei];
        if e.a == e.b || residual.removed[e.a] || residual.removed[e.b] {
            continue;
        }
        let len = e.length();
        adj[e.a].push((e.b, ei, len));
        adj[e.b].push((e.a, ei, len));
    }

    // driving direction arriving at / leaving each vertex along approaches
    let arriving: Vec<Option<Vec2>> = (0..n)
        .map(|v| {
            mean_direction(
                graph
                    .edges
                    .iter()
                    .filter(|e| e.to == v)
                    .filter_map(|e| approach_tangent(e.geometry.waypoints(), true)),
            )
        })
        .collect();
    let leaving: Vec<Option<Vec2>> = (0..n)
        .map(|v| {
            mean_direction(
                graph
                    .edges
                    .iter()
                    .filter(|e| e.from == v)
                    .filter_map(|e| approach_tangent(e.geometry.waypoints(), false)),
            )
        })
        .collect();

    let entries: Vec<usize> = (0..n)
        .filter(|&v| !residual.removed[v] && lg.labels[v].is_entry() && !adj[v].is_empty())
        .collect();
    let exits: Vec<usize> = (0..n)
        .filter(|&v| !residual.removed[v] && lg.labels[v].is_exit() && !adj[v].is_empty())
        .collect();

    let positions: Vec<Vec2> = graph.vertices.iter().map(|v| v.position).collect();
    let stroke = cfg.stroke as f64;
    let connectors: Vec<Vec<DirectedEdge>> = entries
        .par_iter()
        .map(|&i| {
            let tree = dijkstra(&adj, i);
            let mut out = Vec::new();
            for &j in &exits {
                if j == i || !tree[j].0.is_finite() {
                    continue;
                }
                // walk back from the exit to collect the chain
                let mut hops = Vec::new();
                let mut v = j;
                while v != i {
                    let (_, prev, edge) = tree[v];
                    hops.push((prev, edge));
                    v = prev;
                }
                hops.reverse();
                let mut chain: Vec<Pixel> = Vec::new();
                for (from, edge) in hops {
                    let px = pg.edges[edge].pixels_from(from);
                    let skip = usize::from(!chain.is_empty());
                    chain.extend_from_slice(&px[skip..]);
                }
                let path = chain_to_world(geometry, &chain, positions[i], positions[j]);
                let own = end_tangents(&path, f64::INFINITY);
                let flow = match (arriving[i], leaving[j], own) {
                    (Some(a), Some(b), _) => Some((a, b)),
                    (Some(a), None, Some(f)) => Some((a, f.1)),
                    (None, Some(b), Some(f)) => Some((f.0, b)),
                    _ => None,
                };
                // tangents taken from the approaches keep the lane smooth
                // across the junction boundary; where a turn splits off
                // tangentially the path's own end tangents fit better, and
                // on short pixel paths those are best taken from a free fit
                let free = free_fit_tangents(&path);
                let fits: Vec<BezierFit> = [flow, own, free]
                    .into_iter()
                    .flatten()
                    .filter_map(|t| fit_and_score(&path, Some(t), geometry, stroke))
                    .collect();
                let best = fits
                    .iter()
                    .filter(|f| f.accepted(cfg.min_iou, cfg.k_thresh))
                    .max_by(|a, b| a.iou.total_cmp(&b.iou));
                let Some(&fit) = best else {
                    for f in &fits {
                        debug!(
                            "rejected connector {i}->{j}: iou {:.3}, max curvature {:.3}",
                            f.iou, f.max_curvature
                        );
                    }
                    continue;
                };
                let dense = fit.curve.polyline(0.1);
                if let Some(geometry) = polyline_to_centerline(&dense, cfg.spacing) {
                    out.push(DirectedEdge {
                        from: i,
                        to: j,
                        geometry,
                        kind: EdgeKind::Connector,
                        fit: Some(fit),
                    });
                }
            }
            out
        })
        .collect();
    graph.edges.extend(connectors.into_iter().flatten());
    graph
}

/// Full raster-to-graph pipeline.
pub fn vectorize(fm: &FeatureMap, cfg: &VectorizeConfig) -> Result<LaneGraph, VectorizeError> {
    let sk = skeletonize_with(fm, cfg.spur_length);
    if sk.is_empty() {
        return Err(VectorizeError::EmptyMap);
    }
    let pg = extract_edges_vertices(&sk);
    let lg = label_terminals(pg, fm)?;
    let (graph, residual) = extract_approach_edges(&lg, fm, cfg);
    let graph = fit_intersection_curves(&lg, &residual, graph, fm.geometry(), cfg);
    Ok(graph.compacted())
}

/// Raster to scenario: vectorized lanes plus decoded agents.
pub fn vectorize_scenario(
    fm: &FeatureMap,
    cfg: &VectorizeConfig,
    agent_cfg: &AgentConfig,
) -> Result<Scenario, VectorizeError> {
    let graph = vectorize(fm, cfg)?;
    let range = fm.width() as f64 * fm.meters_per_pixel();
    let h = 0.5 * range;
    let lanes = graph
        .edges
        .iter()
        .filter_map(|e| {
            let pts: Vec<Vec2> = e
                .geometry
                .waypoints()
                .iter()
                .map(|p| Vec2::new(p.x.clamp(-h, h), p.y.clamp(-h, h)))
                .collect();
            Centerline::from_points_dedup(&pts)
        })
        .collect();
    let agents = extract_agents(fm, agent_cfg)
        .into_iter()
        .map(|d| d.to_agent())
        .collect();
    let mut s = Scenario::new(lanes, agents, range, agent_cfg.v_max)?;
    s.metadata.insert("source".into(), "vectorized".into());
    Ok(s)
}

#[cfg(test)]
mod tests;
