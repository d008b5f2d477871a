use super::*;
use crate::raster::rasterize;
use crate::scenario::DEFAULT_V_MAX;
use crate::skeleton::skeletonize;

fn lane(pts: &[(f64, f64)]) -> Centerline {
    Centerline::new(pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
}

fn raster(lanes: Vec<Centerline>) -> FeatureMap {
    let s = Scenario::new(lanes, vec![], 80.0, DEFAULT_V_MAX).unwrap();
    rasterize(&s, 256, 256, 3).unwrap()
}

fn labeled(fm: &FeatureMap) -> LabeledGraph {
    label_terminals(extract_edges_vertices(&skeletonize(fm)), fm).unwrap()
}

fn flip_directions(fm: &FeatureMap) -> FeatureMap {
    let mut out = fm.clone();
    let n = fm.width() * fm.height();
    for v in &mut out.data_mut()[..2 * n] {
        *v = 1.0 - *v;
    }
    out
}

#[test]
fn horizontal_lane_labels() {
    let fm = raster(vec![lane(&[(-30.0, 0.0), (30.0, 0.0)])]);
    let lg = labeled(&fm);
    assert_eq!(lg.graph.vertices.len(), 2);
    let west = (0..2).min_by(|&a, &b| lg.graph.vertices[a].center.x.total_cmp(&lg.graph.vertices[b].center.x)).unwrap();
    assert_eq!(lg.labels[west], VertexLabel::Entry);
    assert_eq!(lg.labels[1 - west], VertexLabel::Exit);

    let lg = labeled(&flip_directions(&fm));
    assert_eq!(lg.labels[west], VertexLabel::Exit);
    assert_eq!(lg.labels[1 - west], VertexLabel::Entry);
}

#[test]
fn straight_lane_round_trip() {
    let fm = raster(vec![lane(&[(-30.0, -10.0), (25.0, 12.0)])]);
    let lg = labeled(&fm);
    let (g, res) = extract_approach_edges(&lg, &fm, &VectorizeConfig::default());
    assert_eq!(g.edges.len(), 1);
    assert_eq!(res.vertex_count(), 0);
    assert!(res.edges.is_empty());

    let g = vectorize(&fm, &VectorizeConfig::default()).unwrap();
    assert_eq!(g.edges.len(), 1);
    let pts = g.edges[0].geometry.waypoints();
    let tol = fm.meters_per_pixel() * 1.0 + 1e-9;
    assert!(pts[0].distance(Vec2::new(-30.0, -10.0)) <= tol, "{:?}", pts[0]);
    assert!(pts.last().unwrap().distance(Vec2::new(25.0, 12.0)) <= tol, "{:?}", pts.last());
    for w in pts.windows(2) {
        assert!(w[0].distance(w[1]) <= 1.0);
    }
}

#[test]
fn t_junction_has_three_approaches() {
    // main road west to east, side road leaving to the south
    let fm = raster(vec![
        lane(&[(-35.0, 0.0), (35.0, 0.0)]),
        lane(&[(0.0, 0.0), (0.0, -35.0)]),
    ]);
    let lg = labeled(&fm);
    assert_eq!(lg.approaches.len(), 3);
    let (g, res) = extract_approach_edges(&lg, &fm, &VectorizeConfig::default());
    assert_eq!(g.edges.len(), 3);
    assert_eq!(res.vertex_count(), 1);
    // the junction sees one incoming and two outgoing approaches
    let j = (0..lg.graph.vertices.len()).find(|&v| lg.graph.vertices[v].degree == 3).unwrap();
    assert_eq!(lg.labels[j], VertexLabel::Through);
    assert_eq!(g.edges.iter().filter(|e| e.to == j).count(), 1);
    assert_eq!(g.edges.iter().filter(|e| e.from == j).count(), 2);
}

#[test]
fn empty_graph_gives_empty_outputs() {
    let lg = LabeledGraph {
        graph: PixelGraph::default(),
        labels: vec![],
        directions: vec![],
        approaches: vec![],
    };
    let fm = raster(vec![lane(&[(-30.0, 0.0), (30.0, 0.0)])]);
    let (g, res) = extract_approach_edges(&lg, &fm, &VectorizeConfig::default());
    assert!(g.edges.is_empty() && g.vertices.is_empty());
    assert!(res.edges.is_empty());
}

#[test]
fn blank_map_is_empty_error() {
    let g = RasterGeometry::centered(64, 64, 0.3125);
    let fm = FeatureMap::background(g);
    assert!(matches!(vectorize(&fm, &VectorizeConfig::default()), Err(VectorizeError::EmptyMap)));
}

/// Two-way crossing roads without turn lanes: the four lanes meet in four
/// crossings, leaving eight approach terminals.
fn crossing_roads() -> Vec<Centerline> {
    vec![
        lane(&[(-38.0, -1.75), (38.0, -1.75)]),
        lane(&[(38.0, 1.75), (-38.0, 1.75)]),
        lane(&[(1.75, -38.0), (1.75, 38.0)]),
        lane(&[(-1.75, 38.0), (-1.75, -38.0)]),
    ]
}

#[test]
fn four_way_terminal_labels() {
    let lanes = crossing_roads();
    let fm = raster(lanes.clone());
    let lg = labeled(&fm);
    let geom = fm.geometry();
    let terminals: Vec<usize> = (0..lg.graph.vertices.len()).filter(|&v| lg.graph.vertices[v].degree == 1).collect();
    assert_eq!(terminals.len(), 8);
    let mut entries = 0;
    for &t in &terminals {
        let p = geom.pixel_to_world(lg.graph.vertices[t].center);
        // the lane whose first or last point is nearest decides the truth
        let (is_start, _) = lanes
            .iter()
            .flat_map(|l| [(true, l.first().distance(p)), (false, l.last().distance(p))])
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let expect = if is_start { VertexLabel::Entry } else { VertexLabel::Exit };
        assert_eq!(lg.labels[t], expect, "terminal at {p:?}");
        entries += usize::from(is_start);
    }
    assert_eq!(entries, 4);
}

#[test]
fn label_antisymmetry() {
    let mut lanes = crossing_roads();
    lanes.push(lane(&[(1.75, -20.0), (10.0, -8.0), (20.0, -1.75)]));
    let fm = raster(lanes);
    let a = labeled(&fm);
    let b = labeled(&flip_directions(&fm));
    assert_eq!(a.graph, b.graph);
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        assert_eq!(*lb, la.swapped());
    }
    for (x, y) in a.approaches.iter().zip(&b.approaches) {
        assert_eq!((x.from, x.to), (y.to, y.from));
    }
    let cfg = VectorizeConfig::default();
    let ga = vectorize(&fm, &cfg).unwrap();
    let gb = vectorize(&flip_directions(&fm), &cfg).unwrap();
    assert_eq!(ga.edges.len(), gb.edges.len());
    let ends = |g: &LaneGraph, rev: bool| {
        let mut v: Vec<(i64, i64, i64, i64)> = g
            .edges
            .iter()
            .map(|e| {
                let (p, q) = (g.vertices[e.from].position, g.vertices[e.to].position);
                let (p, q) = if rev { (q, p) } else { (p, q) };
                let k = |x: f64| (x * 1000.0).round() as i64;
                (k(p.x), k(p.y), k(q.x), k(q.y))
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(ends(&ga, false), ends(&gb, true));
}

#[test]
fn one_way_cross_with_turns() {
    // west->east and south->north, with the two right-hand turns between them
    let r = 10.0;
    let turn = |c: Vec2, a0: f64, a1: f64| -> Centerline {
        let pts: Vec<Vec2> = (0..=30)
            .map(|i| {
                let a = a0 + (a1 - a0) * i as f64 / 30.0;
                c + Vec2::from_angle(a) * r
            })
            .collect();
        Centerline::new(pts).unwrap()
    };
    use std::f64::consts::PI;
    let lanes = vec![
        lane(&[(-38.0, 0.0), (-10.0, 0.0)]),
        lane(&[(-10.0, 0.0), (10.0, 0.0)]),
        lane(&[(10.0, 0.0), (38.0, 0.0)]),
        lane(&[(0.0, -38.0), (0.0, -10.0)]),
        lane(&[(0.0, -10.0), (0.0, 10.0)]),
        lane(&[(0.0, 10.0), (0.0, 38.0)]),
        // west approach turning left onto the northbound exit
        turn(Vec2::new(-10.0, 10.0), -PI / 2.0, 0.0),
        // south approach turning right onto the eastbound exit
        turn(Vec2::new(10.0, -10.0), PI, PI / 2.0),
    ];
    let fm = raster(lanes);
    let cfg = VectorizeConfig::default();
    let g = vectorize(&fm, &cfg).unwrap();
    let approaches = g.edges.iter().filter(|e| e.kind == EdgeKind::Approach).count();
    let connectors: Vec<&DirectedEdge> = g.edges.iter().filter(|e| e.kind == EdgeKind::Connector).collect();
    assert_eq!(approaches, 4);
    // 2 entries x 2 exits candidate pairs; the through moves and both turns
    // must survive the gates
    assert!(connectors.len() <= 4);
    assert_eq!(connectors.len(), 4, "{:#?}", connectors.iter().map(|e| e.fit).collect::<Vec<_>>());
    for e in &connectors {
        let fit = e.fit.unwrap();
        assert!(fit.iou >= cfg.min_iou && fit.max_curvature <= cfg.k_thresh);
    }
    for e in &g.edges {
        let pts = e.geometry.waypoints();
        assert_eq!(pts[0], g.vertices[e.from].position);
        assert_eq!(*pts.last().unwrap(), g.vertices[e.to].position);
        for w in pts.windows(2) {
            assert!(w[0].distance(w[1]) <= 1.0);
        }
    }
}

#[test]
fn raising_k_thresh_never_removes_connectors() {
    let lanes = vec![
        lane(&[(-38.0, 0.0), (38.0, 0.0)]),
        lane(&[(0.0, -38.0), (0.0, 38.0)]),
        lane(&[(-6.0, 0.0), (-2.0, 1.0), (0.0, 6.0)]),
    ];
    let fm = raster(lanes);
    let mut prev = 0;
    for k in [0.05, 0.1, 0.2, 0.5, 2.0] {
        let cfg = VectorizeConfig {
            k_thresh: k,
            ..Default::default()
        };
        let n = vectorize(&fm, &cfg).unwrap().edges.len();
        assert!(n >= prev);
        prev = n;
    }
}

#[test]
fn lane_graph_from_centerlines_joins_ends() {
    let lanes = vec![
        lane(&[(0.0, 0.0), (10.0, 0.0)]),
        lane(&[(10.0, 0.0), (20.0, 5.0)]),
        lane(&[(10.0, 0.0), (20.0, -5.0)]),
    ];
    let g = LaneGraph::from_centerlines(&lanes, 0.1);
    assert_eq!(g.vertices.len(), 4);
    assert_eq!(g.successors(0), vec![1, 2]);
}

#[test]
fn endpoint_error_over_orientations() {
    let mpp = 0.3125;
    let mut worst: f64 = 0.0;
    for k in 0..36 {
        let a = k as f64 * 10f64.to_radians() + 0.13;
        let d = Vec2::from_angle(a);
        let (p, q) = (d * -25.0 + Vec2::new(1.1, -0.7), d * 25.0 + Vec2::new(1.1, -0.7));
        let fm = raster(vec![Centerline::new(vec![p, q]).unwrap()]);
        let g = vectorize(&fm, &VectorizeConfig::default()).unwrap();
        assert_eq!(g.edges.len(), 1, "k={k}");
        let pts = g.edges[0].geometry.waypoints();
        let e = pts[0].distance(p).max(pts.last().unwrap().distance(q)) / mpp;
        worst = worst.max(e);
    }
    assert!(worst <= 1.0, "{worst}");
}
