//! Raster codec: scenario -> three-channel BEV feature map and the per-pixel
//! inverse decoders.
//!
//! Channel layout (values in `[0, 1]`):
//!
//! * channels 0 and 1 hold `0.5 * (1 + d)` for the unit lane direction `d`;
//!   non-lane pixels encode the zero vector, i.e. `0.5`.
//! * channel 2 holds `0.5 * (1 + v / v_max)` inside agent boxes, `0` elsewhere.
//!
//! Pixel `(col, row)` has its center at world
//! `(origin.x + col * mpp, origin.y - row * mpp)`: rows grow downwards, world
//! `y` grows upwards.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::Vec2;
use crate::scenario::{Scenario, ScenarioError, Waypoint};

/// Number of feature-map channels.
pub const CHANNELS: usize = 3;
/// Default lane stroke width in pixels.
pub const DEFAULT_STROKE: usize = 3;
/// Default raster side length in pixels.
pub const DEFAULT_SIZE: usize = 256;
/// Minimum `|2C - 1|` for a pixel to count as a lane pixel.
pub const LANE_PRESENCE_THRESHOLD: f64 = 0.3;

const MAGIC: &[u8; 4] = b"DSGF";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster must be square, got {width}x{height}")]
    NotSquare { width: usize, height: usize },
    #[error("stroke width must be odd and >= 1, got {0}")]
    InvalidStroke(usize),
    #[error("raster dimensions must be positive and fit in u16, got {width}x{height}")]
    InvalidSize { width: usize, height: usize },
    #[error("{what} at ({x:.3}, {y:.3}) lies outside the raster; normalize the scenario first")]
    OutOfRange { what: &'static str, x: f64, y: f64 },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("malformed raster file: {0}")]
    Format(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Affine map from world meters to continuous pixel coordinates (pixel
/// centers at integer coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldToPixel {
    /// Pixels per meter.
    pub scale: f64,
    pub translation: Vec2,
}

impl WorldToPixel {
    #[inline]
    pub fn apply(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.scale * p.x + self.translation.x, -self.scale * p.y + self.translation.y)
    }

    #[inline]
    pub fn invert(&self, px: Vec2) -> Vec2 {
        Vec2::new(
            (px.x - self.translation.x) / self.scale,
            (self.translation.y - px.y) / self.scale,
        )
    }
}

/// Size and placement of a raster in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterGeometry {
    pub width: usize,
    pub height: usize,
    pub meters_per_pixel: f64,
    /// World coordinate of the center of pixel `(0, 0)`.
    pub origin: Waypoint,
}

impl RasterGeometry {
    /// A raster centered on the world origin.
    pub fn centered(width: usize, height: usize, meters_per_pixel: f64) -> Self {
        let origin = Vec2::new(
            -(width as f64) * meters_per_pixel / 2.0 + meters_per_pixel / 2.0,
            (height as f64) * meters_per_pixel / 2.0 - meters_per_pixel / 2.0,
        );
        Self {
            width,
            height,
            meters_per_pixel,
            origin,
        }
    }

    pub fn transform(&self) -> WorldToPixel {
        let scale = 1.0 / self.meters_per_pixel;
        WorldToPixel {
            scale,
            translation: Vec2::new(-self.origin.x * scale, self.origin.y * scale),
        }
    }

    #[inline]
    pub fn world_to_pixel(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            (p.x - self.origin.x) / self.meters_per_pixel,
            (self.origin.y - p.y) / self.meters_per_pixel,
        )
    }

    #[inline]
    pub fn pixel_to_world(&self, px: Vec2) -> Vec2 {
        Vec2::new(
            self.origin.x + px.x * self.meters_per_pixel,
            self.origin.y - px.y * self.meters_per_pixel,
        )
    }

    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> Vec2 {
        self.pixel_to_world(Vec2::new(col as f64, row as f64))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn on_border(&self, col: usize, row: usize) -> bool {
        col == 0 || row == 0 || col + 1 == self.width || row + 1 == self.height
    }

    /// Pixel-space direction (col, row) of a world direction.
    #[inline]
    pub fn world_dir_to_pixel(d: Vec2) -> Vec2 {
        Vec2::new(d.x, -d.y)
    }

    /// World direction of a pixel-space direction (col, row).
    #[inline]
    pub fn pixel_dir_to_world(d: Vec2) -> Vec2 {
        Vec2::new(d.x, -d.y)
    }
}

/// `W x H x 3` feature map stored as three row-major `f32` planes.
///
/// Codec output is always in `[0, 1]`; maps produced by the diffusion code
/// may leave that interval until clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    geometry: RasterGeometry,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Map holding the encoding of an empty scene: direction channels `0.5`,
    /// agent channel `0`.
    pub fn background(geometry: RasterGeometry) -> Self {
        let n = geometry.len();
        let mut data = vec![0.5f32; CHANNELS * n];
        data[2 * n..].fill(0.0);
        Self { geometry, data }
    }

    pub fn zeros(geometry: RasterGeometry) -> Self {
        Self {
            geometry,
            data: vec![0.0; CHANNELS * geometry.len()],
        }
    }

    pub fn from_data(geometry: RasterGeometry, data: Vec<f32>) -> Result<Self, RasterError> {
        let expected = CHANNELS * geometry.len();
        if data.len() != expected {
            return Err(RasterError::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { geometry, data })
    }

    #[inline]
    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.geometry.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.geometry.height
    }
    #[inline]
    pub fn meters_per_pixel(&self) -> f64 {
        self.geometry.meters_per_pixel
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.geometry.len();
        &self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, col: usize, row: usize) -> f32 {
        self.data[channel * self.geometry.len() + self.geometry.index(col, row)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, col: usize, row: usize, v: f32) {
        let i = channel * self.geometry.len() + self.geometry.index(col, row);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.geometry.width == other.geometry.width && self.geometry.height == other.geometry.height
    }

    pub fn clamped(&self) -> FeatureMap {
        FeatureMap {
            geometry: self.geometry,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn is_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Lane-presence mask derived from the direction channels.
    pub fn lane_mask(&self) -> Vec<bool> {
        let n = self.geometry.len();
        (0..n)
            .map(|i| {
                let dx = 2.0 * self.data[i] as f64 - 1.0;
                let dy = 2.0 * self.data[n + i] as f64 - 1.0;
                dx.hypot(dy) >= LANE_PRESENCE_THRESHOLD
            })
            .collect()
    }
}

/// Encodes a unit direction into the two direction channels.
#[inline]
pub fn encode_direction(d: Vec2) -> [f32; 2] {
    [(0.5 * (1.0 + d.x)) as f32, (0.5 * (1.0 + d.y)) as f32]
}

/// Encodes a speed into the agent channel.
#[inline]
pub fn encode_speed(speed: f64, v_max: f64) -> f32 {
    (0.5 * (1.0 + speed / v_max)) as f32
}

/// Inverse of [`encode_speed`] for an agent-pixel value, clamped to
/// `[0, v_max]`.
#[inline]
pub fn decode_speed(value: f64, v_max: f64) -> f64 {
    ((2.0 * value - 1.0) * v_max).clamp(0.0, v_max)
}

/// Decodes the lane direction at a pixel, or `None` for background.
pub fn decode_direction(fm: &FeatureMap, col: usize, row: usize) -> Option<Vec2> {
    let d = Vec2::new(
        2.0 * fm.get(0, col, row) as f64 - 1.0,
        2.0 * fm.get(1, col, row) as f64 - 1.0,
    );
    if d.norm() >= LANE_PRESENCE_THRESHOLD {
        d.normalized()
    } else {
        None
    }
}

/// Calls `f(col, row)` for every pixel whose center is within `stroke / 2`
/// pixels of the segment `a`-`b` (continuous pixel coordinates).
pub fn for_each_stroke_pixel(
    a: Vec2,
    b: Vec2,
    stroke: f64,
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, usize),
) {
    let half = 0.5 * stroke;
    let lo_c = (a.x.min(b.x) - half).ceil().max(0.0);
    let hi_c = (a.x.max(b.x) + half).floor().min(width as f64 - 1.0);
    let lo_r = (a.y.min(b.y) - half).ceil().max(0.0);
    let hi_r = (a.y.max(b.y) + half).floor().min(height as f64 - 1.0);
    if lo_c > hi_c || lo_r > hi_r {
        return;
    }
    for row in lo_r as usize..=hi_r as usize {
        for col in lo_c as usize..=hi_c as usize {
            let p = Vec2::new(col as f64, row as f64);
            let (d, _) = crate::geometry::point_segment_distance(p, a, b);
            if d <= half + 1e-9 {
                f(col, row);
            }
        }
    }
}

/// Rasterizes a normalized scenario into a `w x h` feature map.
///
/// Lanes are drawn in order with the given stroke; a later lane overwrites the
/// direction of an earlier one at shared pixels. Agent boxes write only the
/// agent channel.
pub fn rasterize(s: &Scenario, w: usize, h: usize, stroke: usize) -> Result<FeatureMap, RasterError> {
    if w != h {
        return Err(RasterError::NotSquare { width: w, height: h });
    }
    if w == 0 || w > u16::MAX as usize {
        return Err(RasterError::InvalidSize { width: w, height: h });
    }
    if stroke == 0 || stroke.is_multiple_of(2) {
        return Err(RasterError::InvalidStroke(stroke));
    }
    s.validate()?;
    let half = s.half_range() * (1.0 + 1e-12);
    let outside = |p: Vec2| p.x.abs() > half || p.y.abs() > half;
    for lane in &s.lanes {
        if let Some(p) = lane.waypoints().iter().find(|p| outside(**p)) {
            return Err(RasterError::OutOfRange {
                what: "lane waypoint",
                x: p.x,
                y: p.y,
            });
        }
    }
    for a in &s.agents {
        let p = a.initial_state.position();
        if outside(p) {
            return Err(RasterError::OutOfRange {
                what: "agent",
                x: p.x,
                y: p.y,
            });
        }
    }

    let geometry = RasterGeometry::centered(w, h, s.range / w as f64);
    let mut fm = FeatureMap::background(geometry);
    let n = geometry.len();

    for lane in &s.lanes {
        let pts = lane.waypoints();
        let dirs = lane.directions();
        for (i, seg) in pts.windows(2).enumerate() {
            let enc = encode_direction(dirs[i]);
            let a = geometry.world_to_pixel(seg[0]);
            let b = geometry.world_to_pixel(seg[1]);
            for_each_stroke_pixel(a, b, stroke as f64, w, h, |c, r| {
                let idx = geometry.index(c, r);
                fm.data[idx] = enc[0];
                fm.data[n + idx] = enc[1];
            });
        }
    }

    for agent in &s.agents {
        let st = &agent.initial_state;
        let value = encode_speed(st.speed, s.v_max);
        fill_oriented_box(&mut fm, st.position(), st.heading, agent.length, agent.width, value);
    }
    Ok(fm)
}

/// Writes `value` into the agent channel for every pixel whose center lies
/// inside the oriented rectangle.
fn fill_oriented_box(fm: &mut FeatureMap, center: Vec2, heading: f64, length: f64, width: f64, value: f32) {
    let geometry = fm.geometry;
    let axis = Vec2::from_angle(heading);
    let side = axis.perp();
    let hl = 0.5 * length;
    let hw = 0.5 * width;
    let corners = [
        center + axis * hl + side * hw,
        center + axis * hl - side * hw,
        center - axis * hl + side * hw,
        center - axis * hl - side * hw,
    ];
    let px: Vec<Vec2> = corners.iter().map(|c| geometry.world_to_pixel(*c)).collect();
    let lo_c = px.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let hi_c = px.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil();
    let lo_r = px.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let hi_r = px.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil();
    if hi_c < 0.0 || hi_r < 0.0 {
        return;
    }
    let hi_c = (hi_c as usize).min(geometry.width - 1);
    let hi_r = (hi_r as usize).min(geometry.height - 1);
    let n = geometry.len();
    for row in lo_r..=hi_r {
        for col in lo_c..=hi_c {
            let d = geometry.pixel_center(col, row) - center;
            if d.dot(axis).abs() <= hl && d.dot(side).abs() <= hw {
                fm.data[2 * n + geometry.index(col, row)] = value;
            }
        }
    }
}

/// Writes an 8-bit RGB PNG with `byte = round(255 * channel)`.
pub fn render_png(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    to_rgb_image(fm).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn to_rgb_image(fm: &FeatureMap) -> image::RgbImage {
    let g = fm.geometry;
    let q = |v: f32| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    image::RgbImage::from_fn(g.width as u32, g.height as u32, |c, r| {
        let (c, r) = (c as usize, r as usize);
        image::Rgb([q(fm.get(0, c, r)), q(fm.get(1, c, r)), q(fm.get(2, c, r))])
    })
}

/// Loads a PNG written by [`render_png`]. PNG carries no scale, so the caller
/// supplies `meters_per_pixel`; the raster is placed centered on the origin.
pub fn load_png(path: impl AsRef<Path>, meters_per_pixel: f64) -> Result<FeatureMap, RasterError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let geometry = RasterGeometry::centered(w, h, meters_per_pixel);
    let mut fm = FeatureMap::zeros(geometry);
    for (c, r, px) in img.enumerate_pixels() {
        for ch in 0..CHANNELS {
            fm.set(ch, c as usize, r as usize, px.0[ch] as f32 / 255.0);
        }
    }
    Ok(fm)
}

/// Serializes to the `DSGF` binary layout: a 16-byte header (magic, u16 W,
/// u16 H, u16 C, u16 reserved, f32 meters-per-pixel) followed by `C`
/// row-major little-endian `f32` planes.
pub fn to_bytes(fm: &FeatureMap) -> Result<Vec<u8>, RasterError> {
    let g = fm.geometry;
    if g.width == 0 || g.height == 0 || g.width > u16::MAX as usize || g.height > u16::MAX as usize {
        return Err(RasterError::InvalidSize {
            width: g.width,
            height: g.height,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fm.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.width as u16).to_le_bytes());
    out.extend_from_slice(&(g.height as u16).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(g.meters_per_pixel as f32).to_le_bytes());
    for v in &fm.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<FeatureMap, RasterError> {
    if bytes.len() < HEADER_LEN {
        return Err(RasterError::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(RasterError::Format("bad magic, expected DSGF".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let (w, h, c) = (u16_at(4), u16_at(6), u16_at(8));
    if c != CHANNELS {
        return Err(RasterError::Format(format!("expected {CHANNELS} channels, got {c}")));
    }
    let mpp = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    if !(mpp > 0.0 && mpp.is_finite()) {
        return Err(RasterError::Format(format!("invalid meters_per_pixel {mpp}")));
    }
    let expected = HEADER_LEN + 4 * c * w * h;
    if bytes.len() != expected {
        return Err(RasterError::Format(format!(
            "expected {expected} bytes for {w}x{h}x{c}, got {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::from_data(RasterGeometry::centered(w, h, mpp), data)
}

pub fn write_raster(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&to_bytes(fm)?)?;
    f.flush()?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<FeatureMap, RasterError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    from_bytes(&buf)
}
