//! Driving-scenario tooling: BEV raster encoding of lane maps and agents,
//! graph-based vectorization back to directed lane graphs, GEO/TOPO graph
//! metrics, diffusion-process numerics over pluggable denoisers, and a
//! rule-based multi-modal rollout.

pub mod agents;
pub mod corpus;
pub mod ddpm;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scenario;
pub mod sim;
pub mod skeleton;
pub mod vectorize;

pub use geometry::Vec2;
pub use raster::{rasterize, FeatureMap, RasterGeometry};
pub use scenario::{normalize_scenario, Agent, AgentState, Centerline, Scenario};
