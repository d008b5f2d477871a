//! Scenario files: pretty-printed JSON with a fixed key order.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "range": 80.0,
//!   "v_max": 30.0,
//!   "dt": 0.1,
//!   "lanes": [[[x, y], ...], ...],
//!   "agents": [{"x": .., "y": .., "heading": .., "speed": .., "length": .., "width": ..,
//!               "trajectory": [[x, y, heading, speed], ...]}],
//!   "metadata": {"key": "value"}
//! }
//! ```
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so write/read/write is byte-stable and reading is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::raster::{self, FeatureMap, RasterError};
use crate::scenario::{Agent, AgentState, Centerline, Scenario, ScenarioError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at {}: {field}: {message}", location(.line, .column))]
    Parse {
        line: Option<usize>,
        column: Option<usize>,
        /// Path of the offending field, e.g. `agents[2].speed`.
        field: String,
        message: String,
    },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn location(line: &Option<usize>, column: &Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!("line {l}, column {c}"),
        (Some(l), None) => format!("line {l}"),
        _ => "document".into(),
    }
}

impl IoError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::Parse {
            line: None,
            column: None,
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<[f64; 4]>>,
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub range: f64,
    pub v_max: f64,
    pub dt: f64,
    pub lanes: Vec<Vec<[f64; 2]>>,
    pub agents: Vec<AgentRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let state = |st: &AgentState| [st.x, st.y, st.heading, st.speed];
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            range: s.range,
            v_max: s.v_max,
            dt: s.dt,
            lanes: s
                .lanes
                .iter()
                .map(|l| l.waypoints().iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            agents: s
                .agents
                .iter()
                .map(|a| AgentRecord {
                    x: a.initial_state.x,
                    y: a.initial_state.y,
                    heading: a.initial_state.heading,
                    speed: a.initial_state.speed,
                    length: a.length,
                    width: a.width,
                    trajectory: a.trajectory.as_ref().map(|t| t.iter().map(state).collect()),
                })
                .collect(),
            metadata: s.metadata.clone(),
        }
    }
}

/// Builds a state without re-wrapping the heading, so stored values come
/// back bit for bit.
fn raw_state(v: [f64; 4]) -> AgentState {
    AgentState {
        x: v[0],
        y: v[1],
        heading: v[2],
        speed: v[3],
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = IoError;

    fn try_from(f: ScenarioFile) -> Result<Self, IoError> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(IoError::SchemaVersionMismatch {
                found: f.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut lanes = Vec::with_capacity(f.lanes.len());
        for (i, pts) in f.lanes.into_iter().enumerate() {
            let pts: Vec<Vec2> = pts.into_iter().map(|[x, y]| Vec2::new(x, y)).collect();
            lanes.push(Centerline::new(pts).map_err(|e| IoError::field(format!("lanes[{i}]"), e.to_string()))?);
        }
        let agents = f
            .agents
            .into_iter()
            .map(|a| Agent {
                length: a.length,
                width: a.width,
                initial_state: raw_state([a.x, a.y, a.heading, a.speed]),
                trajectory: a.trajectory.map(|t| t.into_iter().map(raw_state).collect()),
            })
            .collect();
        let s = Scenario {
            lanes,
            agents,
            range: f.range,
            v_max: f.v_max,
            dt: f.dt,
            metadata: f.metadata,
        };
        s.validate().map_err(|e| match e {
            ScenarioError::InvalidAgent { index, reason } => IoError::field(format!("agents[{index}]"), reason),
            ScenarioError::InvalidRange(_) => IoError::field("range", e.to_string()),
            ScenarioError::InvalidVMax(_) => IoError::field("v_max", e.to_string()),
            ScenarioError::InvalidDt(_) => IoError::field("dt", e.to_string()),
            other => IoError::field("scenario", other.to_string()),
        })?;
        Ok(s)
    }
}

pub fn scenario_to_string(s: &Scenario) -> String {
    let mut out = serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("scenario serializes");
    out.push('\n');
    out
}

pub fn scenario_from_str(text: &str) -> Result<Scenario, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            line: Some(inner.line()),
            column: Some(inner.column()),
            field,
            message: inner.to_string(),
        }
    })?;
    Scenario::try_from(file)
}

pub fn write_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, scenario_to_string(s)).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scenario_from_str(&text)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a raster by extension: `.png` as an 8-bit image spanning `range`
/// meters, anything else as the binary float layout.
pub fn read_raster_any(path: impl AsRef<Path>, range: f64) -> Result<FeatureMap, RasterError> {
    let path = path.as_ref();
    if is_png(path) {
        let (w, _) = image::image_dimensions(path)?;
        raster::load_png(path, range / w as f64)
    } else {
        raster::read_raster(path)
    }
}

/// Writes a raster by extension; PNG output is quantized to 8 bits.
pub fn write_raster_any(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    if is_png(path) {
        raster::render_png(fm, path)
    } else {
        raster::write_raster(fm, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Scenario {
        let lanes = vec![
            Centerline::new(vec![Vec2::new(-40.0, 1.75), Vec2::new(0.1, 1.75), Vec2::new(40.0, 2.0 / 3.0)]).unwrap(),
            Centerline::new(vec![Vec2::new(3.0, -40.0), Vec2::new(3.0, 40.0)]).unwrap(),
        ];
        let mut a = Agent::new(4.5, 1.9, AgentState::new(1.0 / 3.0, 1.75, 0.1, 12.5));
        a.trajectory = Some(vec![a.initial_state, AgentState::new(1.6, 1.75, 0.1, 12.5)]);
        let b = Agent::new(5.0, 2.0, AgentState::new(3.0, -10.0, std::f64::consts::FRAC_PI_2, 0.0));
        let mut s = Scenario::new(lanes, vec![a, b], 80.0, 30.0).unwrap();
        s.metadata.insert("template".into(), "x_junction".into());
        s
    }

    #[test]
    fn round_trip_is_identity_and_byte_stable() {
        let s = sample();
        let text = scenario_to_string(&s);
        let back = scenario_from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(scenario_to_string(&back), text);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_scenario(&s, &p).unwrap();
        assert_eq!(read_scenario(&p).unwrap(), s);
    }

    #[test]
    fn key_order_is_fixed() {
        let text = scenario_to_string(&sample());
        let keys = ["\"schema_version\"", "\"range\"", "\"v_max\"", "\"dt\"", "\"lanes\"", "\"agents\"", "\"metadata\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = scenario_to_string(&sample());
        let cut = &text[..text.len() / 2];
        match scenario_from_str(cut) {
            Err(IoError::Parse { line: Some(l), .. }) => assert!(l > 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn speed_above_v_max_names_agent() {
        let text = scenario_to_string(&sample()).replace("\"speed\": 0.0", "\"speed\": 31.0");
        match scenario_from_str(&text) {
            Err(IoError::Parse { field, .. }) => assert_eq!(field, "agents[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_field_path() {
        let text = scenario_to_string(&sample()).replace("\"width\": 2.0", "\"width\": \"wide\"");
        match scenario_from_str(&text) {
            Err(IoError::Parse { field, line, .. }) => {
                assert_eq!(field, "agents[1].width");
                assert!(line.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_version_mismatch() {
        let text = scenario_to_string(&sample()).replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(
            scenario_from_str(&text),
            Err(IoError::SchemaVersionMismatch { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn degenerate_lane_is_rejected() {
        let text = r#"{"schema_version": 1, "range": 80.0, "v_max": 30.0, "dt": 0.1,
            "lanes": [[[0.0, 0.0]]], "agents": []}"#;
        match scenario_from_str(text) {
            Err(IoError::Parse { field, .. }) => assert_eq!(field, "lanes[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raster_io_dispatches_on_extension() {
        let s = sample();
        let fm = raster::rasterize(&s, 64, 64, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("f.dsgf");
        write_raster_any(&fm, &bin).unwrap();
        assert_eq!(read_raster_any(&bin, 1.0).unwrap(), fm);
        let png = dir.path().join("f.png");
        write_raster_any(&fm, &png).unwrap();
        let back = read_raster_any(&png, 80.0).unwrap();
        assert_eq!(back.meters_per_pixel(), 1.25);
        for (a, b) in back.data().iter().zip(fm.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    proptest! {
        #[test]
        fn arbitrary_floats_round_trip(
            xs in prop::collection::vec(-1e6..1e6f64, 2..12),
            v in 0.0..30.0f64,
            h in -std::f64::consts::PI..std::f64::consts::PI,
        ) {
            let pts: Vec<Vec2> = xs.iter().enumerate().map(|(i, x)| Vec2::new(*x, i as f64 * 1.1)).collect();
            let lane = Centerline::new(pts).unwrap();
            let a = Agent::new(4.0, 2.0, AgentState::new(xs[0], xs[1], h, v));
            let s = Scenario::new(vec![lane], vec![a], 80.0, 30.0).unwrap();
            let text = scenario_to_string(&s);
            let back = scenario_from_str(&text).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(scenario_to_string(&back), text);
        }
    }
}
