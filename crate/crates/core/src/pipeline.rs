//! Rasterize, vectorize and score in one call.

use thiserror::Error;

use crate::metrics::{evaluate, EvalConfig, GeoTopoScore, MetricsError};
use crate::raster::{rasterize, RasterError};
use crate::scenario::Scenario;
use crate::vectorize::{vectorize, LaneGraph, VectorizeConfig, VectorizeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone)]
pub struct RoundTrip {
    pub graph: LaneGraph,
    pub score: GeoTopoScore,
}

/// Scores the lanes recovered from a `size`-pixel raster of `s` against
/// the lanes of `s` itself.
pub fn roundtrip(
    s: &Scenario,
    size: usize,
    vcfg: &VectorizeConfig,
    ecfg: &EvalConfig,
) -> Result<RoundTrip, PipelineError> {
    let fm = rasterize(s, size, size, vcfg.stroke)?;
    let graph = vectorize(&fm, vcfg)?;
    let score = evaluate(&s.lanes, &graph.centerlines(), ecfg)?;
    Ok(RoundTrip { graph, score })
}
