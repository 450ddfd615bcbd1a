//! Rank-surprisal suitability scoring for distillation data.
//!
//! Token statistics (surprisal and rank under a student model) are ingested
//! from line-delimited files, scored with trajectory- and dataset-level
//! metrics, and used to pick trajectories and teachers. The crate also carries
//! the Zipf-mixture simulation and the correlation tooling used to compare
//! metrics against post-training results.

pub mod correlation;
pub mod error;
pub mod fixtures;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod par;
pub mod quality;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
pub use metrics::{ClipThreshold, Direction, Metric, MetricParams, MetricValue};
pub use model::{
    Provenance, RecordKey, ScoreTable, TokenStat, TrajectoryDataset, TrajectoryRecord,
};
