//! Thinning of the lane-presence mask and extraction of the undirected pixel
//! graph (vertices at endpoints and junctions, edges along pixel chains).
//!
//! Adjacency along the skeleton is m-adjacency: 4-neighbors always connect,
//! diagonal neighbors only when no shared 4-neighbor is foreground. This keeps
//! the small corner pixels left by thinning from reading as junctions.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::geometry::Vec2;
use crate::raster::FeatureMap;

/// Chains shorter than this (pixels, junction excluded) hanging off a
/// junction are removed.
pub const DEFAULT_SPUR_LENGTH: usize = 5;

/// Neighbor offsets in Zhang-Suen order P2..P9 (N, NE, E, SE, S, SW, W, NW).
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

pub type Pixel = (usize, usize);

/// Binary mask of skeleton pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl SkeletonMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self { width, height, bits }
    }

    /// Parses rows of `#` (foreground) and anything else (background).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut m = Self::new(width, height);
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '#' {
                    m.set(c, r, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize) -> bool {
        self.bits[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    /// Foreground test with out-of-bounds treated as background.
    #[inline]
    fn at(&self, c: isize, r: isize) -> bool {
        c >= 0
            && r >= 0
            && (c as usize) < self.width
            && (r as usize) < self.height
            && self.bits[r as usize * self.width + c as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    fn ring(&self, c: usize, r: usize) -> [bool; 8] {
        let mut out = [false; 8];
        for (k, (dc, dr)) in RING.iter().enumerate() {
            out[k] = self.at(c as isize + dc, r as isize + dr);
        }
        out
    }

    /// Foreground m-neighbors of a pixel.
    pub fn m_neighbors(&self, c: usize, r: usize) -> Vec<Pixel> {
        let (ci, ri) = (c as isize, r as isize);
        let mut out = Vec::with_capacity(4);
        for (dc, dr) in RING {
            if !self.at(ci + dc, ri + dr) {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal && (self.at(ci + dc, ri) || self.at(ci, ri + dr)) {
                continue;
            }
            out.push(((ci + dc) as usize, (ri + dr) as usize));
        }
        out
    }

    pub fn m_degree(&self, c: usize, r: usize) -> usize {
        self.m_neighbors(c, r).len()
    }

    pub fn on_border(&self, (c, r): Pixel) -> bool {
        c == 0 || r == 0 || c + 1 == self.width || r + 1 == self.height
    }
}

/// One Zhang-Suen pass (both sub-iterations). Returns whether anything was
/// removed.
fn zhang_suen_pass(m: &mut SkeletonMask) -> bool {
    let mut changed = false;
    for step in 0..2 {
        let mut remove = Vec::new();
        for r in 0..m.height {
            for c in 0..m.width {
                if !m.get(c, r) {
                    continue;
                }
                let p = m.ring(c, r);
                let b = p.iter().filter(|v| **v).count();
                if !(2..=6).contains(&b) {
                    continue;
                }
                let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                if a != 1 {
                    continue;
                }
                // p[0]=P2(N), p[2]=P4(E), p[4]=P6(S), p[6]=P8(W)
                let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                let ok = if step == 0 {
                    !(n && e && s) && !(e && s && w)
                } else {
                    !(n && e && w) && !(n && s && w)
                };
                if ok {
                    remove.push((c, r));
                }
            }
        }
        changed |= !remove.is_empty();
        for (c, r) in remove {
            m.set(c, r, false);
        }
    }
    changed
}

/// Yokoi connectivity number for 8-connected foreground; `1` means the pixel
/// is simple (deleting it changes no topology).
fn yokoi8(p: &[bool; 8]) -> usize {
    // counter-clockwise from E: E, NE, N, NW, W, SW, S, SE
    let x = [p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]];
    let nx = |k: usize| !x[k % 8] as usize;
    (0..4)
        .map(|i| {
            let k = 2 * i;
            nx(k) - nx(k) * nx(k + 1) * nx(k + 2)
        })
        .sum()
}

/// Removes simple corner pixels that join two perpendicular 4-neighbors, so
/// diagonal runs become strict 8-connected staircases. Raster-order, in
/// place, hence deterministic.
fn remove_staircases(m: &mut SkeletonMask) -> bool {
    let mut changed = false;
    for r in 0..m.height {
        for c in 0..m.width {
            if !m.get(c, r) {
                continue;
            }
            let p = m.ring(c, r);
            if p.iter().filter(|v| **v).count() < 2 {
                continue;
            }
            let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
            let corner = (n && e) || (e && s) || (s && w) || (w && n);
            if corner && yokoi8(&p) == 1 {
                m.set(c, r, false);
                changed = true;
            }
        }
    }
    changed
}

/// Removes terminal chains shorter than `spur_len` that hang off a junction.
/// Chains ending on the raster border are kept: they are lane continuations
/// leaving the scene.
fn prune_spurs(m: &mut SkeletonMask, spur_len: usize) -> bool {
    if spur_len == 0 {
        return false;
    }
    let g = extract_edges_vertices(m);
    let mut remove = Vec::new();
    for e in &g.edges {
        let (va, vb) = (&g.vertices[e.a], &g.vertices[e.b]);
        let (term, junction_at_end) = match (va.degree, vb.degree) {
            (1, d) if d >= 3 => (va, true),
            (d, 1) if d >= 3 => (vb, false),
            _ => continue,
        };
        if m.on_border(term.pixels[0]) {
            continue;
        }
        let spur: &[Pixel] = if junction_at_end {
            &e.pixels[..e.pixels.len() - 1]
        } else {
            &e.pixels[1..]
        };
        if spur.len() < spur_len {
            remove.extend_from_slice(spur);
        }
    }
    for &(c, r) in &remove {
        m.set(c, r, false);
    }
    !remove.is_empty()
}

/// Thins a binary mask to a one-pixel-wide skeleton: Zhang-Suen to a fixpoint,
/// staircase removal and spur pruning, repeated until nothing changes.
pub fn thin_mask(mask: &SkeletonMask, spur_len: usize) -> SkeletonMask {
    let mut m = mask.clone();
    loop {
        let mut changed = false;
        while zhang_suen_pass(&mut m) {
            changed = true;
        }
        changed |= remove_staircases(&mut m);
        changed |= prune_spurs(&mut m, spur_len);
        if !changed {
            break;
        }
    }
    extend_terminals(&mut m, mask);
    m
}

/// Zhang-Suen erodes chain ends unevenly (the first sub-iteration favors the
/// south-east side). Grows each terminal back along its own direction while
/// the pixel after the next one is still inside the source mask.
fn extend_terminals(m: &mut SkeletonMask, mask: &SkeletonMask) {
    let ends: Vec<Pixel> = m.pixels().filter(|&(c, r)| m.m_degree(c, r) == 1).collect();
    for end in ends {
        let nb = m.m_neighbors(end.0, end.1)[0];
        let (dc, dr) = (end.0 as isize - nb.0 as isize, end.1 as isize - nb.1 as isize);
        let (mut c, mut r) = (end.0 as isize, end.1 as isize);
        loop {
            let (nc, nr) = (c + dc, r + dr);
            if !mask.at(nc, nr) || !mask.at(nc + dc, nr + dr) || m.at(nc, nr) {
                break;
            }
            // the new pixel may only touch the current end
            let touches_other = RING.iter().any(|(ec, er)| {
                let (qc, qr) = (nc + ec, nr + er);
                (qc, qr) != (c, r) && m.at(qc, qr)
            });
            if touches_other {
                break;
            }
            m.set(nc as usize, nr as usize, true);
            c = nc;
            r = nr;
        }
    }
}

/// Skeleton of a feature map's lane-presence mask.
pub fn skeletonize(fm: &FeatureMap) -> SkeletonMask {
    skeletonize_with(fm, DEFAULT_SPUR_LENGTH)
}

pub fn skeletonize_with(fm: &FeatureMap, spur_len: usize) -> SkeletonMask {
    let mask = SkeletonMask::from_bits(fm.width(), fm.height(), fm.lane_mask());
    thin_mask(&mask, spur_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    /// Degree-1 chain end.
    Terminal,
    /// Merged cluster of pixels with three or more m-neighbors.
    Junction,
    /// Anchor placed on a closed loop that has no other vertex.
    LoopAnchor,
    /// Lone pixel with no neighbors.
    Isolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelVertex {
    pub kind: VertexKind,
    pub pixels: Vec<Pixel>,
    /// Centroid in continuous pixel coordinates (col, row).
    pub center: Vec2,
    /// Number of incident edge ends (a self-loop counts twice).
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelEdge {
    pub a: usize,
    pub b: usize,
    /// 8-connected chain from a pixel of vertex `a` to a pixel of vertex `b`,
    /// both included.
    pub pixels: Vec<Pixel>,
}

impl PixelEdge {
    /// Chain pixels that belong to no vertex.
    pub fn interior(&self) -> &[Pixel] {
        if self.pixels.len() <= 2 {
            &[]
        } else {
            &self.pixels[1..self.pixels.len() - 1]
        }
    }

    pub fn other(&self, v: usize) -> usize {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }

    /// Chain length in pixels (sum of step lengths).
    pub fn length(&self) -> f64 {
        self.pixels
            .windows(2)
            .map(|w| {
                let dc = w[0].0 as f64 - w[1].0 as f64;
                let dr = w[0].1 as f64 - w[1].1 as f64;
                dc.hypot(dr)
            })
            .sum()
    }

    /// Chain as seen walking from vertex `from`.
    pub fn pixels_from(&self, from: usize) -> Vec<Pixel> {
        if from == self.a {
            self.pixels.clone()
        } else {
            self.pixels.iter().rev().copied().collect()
        }
    }
}

/// Undirected skeleton graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelGraph {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<PixelVertex>,
    pub edges: Vec<PixelEdge>,
}

impl PixelGraph {
    /// Incident edge indices per vertex (a self-loop appears twice).
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e.a].push(i);
            inc[e.b].push(i);
        }
        inc
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.degree == 1)
            .map(|(i, _)| i)
    }

    pub fn junction_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Junction).count()
    }
}

/// Builds the pixel graph of a one-pixel-wide mask.
///
/// Pixels whose m-degree differs from 2 are vertex pixels; 8-connected groups
/// of junction pixels (m-degree >= 3) merge into one vertex at their
/// centroid. Maximal chains of degree-2 pixels become edges.
pub fn extract_edges_vertices(sk: &SkeletonMask) -> PixelGraph {
    let w = sk.width;
    let idx = |(c, r): Pixel| r * w + c;
    let mut degree = vec![0usize; sk.bits.len()];
    for p in sk.pixels() {
        degree[idx(p)] = sk.m_degree(p.0, p.1);
    }

    // vertex id per pixel, usize::MAX for chain pixels
    let mut owner = vec![usize::MAX; sk.bits.len()];
    let mut vertices: Vec<PixelVertex> = Vec::new();
    for p in sk.pixels() {
        let d = degree[idx(p)];
        if d == 2 || owner[idx(p)] != usize::MAX {
            continue;
        }
        let id = vertices.len();
        let (kind, pixels) = match d {
            0 => (VertexKind::Isolated, vec![p]),
            1 => (VertexKind::Terminal, vec![p]),
            _ => {
                // flood the 8-connected group of junction pixels
                let mut group = vec![p];
                owner[idx(p)] = id;
                let mut k = 0;
                while k < group.len() {
                    let (c, r) = group[k];
                    for (dc, dr) in RING {
                        let (nc, nr) = (c as isize + dc, r as isize + dr);
                        if !sk.at(nc, nr) {
                            continue;
                        }
                        let q = (nc as usize, nr as usize);
                        if degree[idx(q)] >= 3 && owner[idx(q)] == usize::MAX {
                            owner[idx(q)] = id;
                            group.push(q);
                        }
                    }
                    k += 1;
                }
                group.sort_by_key(|&(c, r)| (r, c));
                (VertexKind::Junction, group)
            }
        };
        for q in &pixels {
            owner[idx(*q)] = id;
        }
        vertices.push(PixelVertex {
            kind,
            center: centroid(&pixels),
            pixels,
            degree: 0,
        });
    }

    let mut edges: Vec<PixelEdge> = Vec::new();
    let mut visited = vec![false; sk.bits.len()];
    let mut direct: HashSet<(usize, usize)> = HashSet::new();

    let mut tracer = Tracer {
        sk,
        owner: &mut owner,
        visited: &mut visited,
        direct: &mut direct,
        edges: &mut edges,
    };
    for v in &vertices {
        for p in &v.pixels {
            tracer.trace(*p);
        }
    }

    // closed loops with no vertex get an anchor at their first pixel
    for p in sk.pixels() {
        if degree[idx(p)] != 2 || tracer.visited[idx(p)] || tracer.owner[idx(p)] != usize::MAX {
            continue;
        }
        let id = vertices.len();
        tracer.owner[idx(p)] = id;
        vertices.push(PixelVertex {
            kind: VertexKind::LoopAnchor,
            pixels: vec![p],
            center: centroid(&[p]),
            degree: 0,
        });
        tracer.trace(p);
    }

    for e in &edges {
        vertices[e.a].degree += 1;
        vertices[e.b].degree += 1;
    }
    PixelGraph {
        width: sk.width,
        height: sk.height,
        vertices,
        edges,
    }
}

struct Tracer<'a> {
    sk: &'a SkeletonMask,
    owner: &'a mut Vec<usize>,
    visited: &'a mut Vec<bool>,
    direct: &'a mut HashSet<(usize, usize)>,
    edges: &'a mut Vec<PixelEdge>,
}

impl Tracer<'_> {
    /// Follows every chain leaving vertex pixel `start` that has not been
    /// traced yet.
    fn trace(&mut self, start: Pixel) {
        let w = self.sk.width;
        let idx = |(c, r): Pixel| r * w + c;
        let v = self.owner[idx(start)];
        for q in self.sk.m_neighbors(start.0, start.1) {
            let oq = self.owner[idx(q)];
            if oq == v {
                continue;
            }
            if oq != usize::MAX {
                let key = (idx(start).min(idx(q)), idx(start).max(idx(q)));
                if self.direct.insert(key) {
                    self.edges.push(PixelEdge {
                        a: v,
                        b: oq,
                        pixels: vec![start, q],
                    });
                }
                continue;
            }
            if self.visited[idx(q)] {
                continue;
            }
            let mut chain = vec![start, q];
            self.visited[idx(q)] = true;
            let (mut prev, mut cur) = (start, q);
            loop {
                let next = self
                    .sk
                    .m_neighbors(cur.0, cur.1)
                    .into_iter()
                    .find(|&n| n != prev)
                    .expect("chain pixel has two m-neighbors");
                chain.push(next);
                if self.owner[idx(next)] != usize::MAX {
                    self.edges.push(PixelEdge {
                        a: v,
                        b: self.owner[idx(next)],
                        pixels: chain,
                    });
                    break;
                }
                self.visited[idx(next)] = true;
                prev = cur;
                cur = next;
            }
        }
    }
}

fn centroid(pixels: &[Pixel]) -> Vec2 {
    let n = pixels.len() as f64;
    let (sc, sr) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(c, r)| (a + c as f64, b + r as f64));
    Vec2::new(sc / n, sr / n)
}

/// Writes a debug image: skeleton white, terminals green, junctions red.
pub fn render_debug_png(sk: &SkeletonMask, g: &PixelGraph, path: impl AsRef<Path>) -> image::ImageResult<()> {
    let mut img = image::RgbImage::new(sk.width as u32, sk.height as u32);
    for (c, r) in sk.pixels() {
        img.put_pixel(c as u32, r as u32, image::Rgb([255, 255, 255]));
    }
    for v in &g.vertices {
        let color = match v.kind {
            VertexKind::Terminal => [0, 200, 0],
            VertexKind::Junction => [230, 0, 0],
            _ => continue,
        };
        for &(c, r) in &v.pixels {
            img.put_pixel(c as u32, r as u32, image::Rgb(color));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
}

/// Vertex id per pixel for quick lookups in tests and the vectorizer.
pub fn vertex_pixel_map(g: &PixelGraph) -> HashMap<Pixel, usize> {
    let mut map = HashMap::new();
    for (i, v) in g.vertices.iter().enumerate() {
        for p in &v.pixels {
            map.insert(*p, i);
        }
    }
    map
}
