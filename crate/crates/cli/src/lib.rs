//! Command-line front end: table ingestion, per-category analysis and
//! simulation reports.

pub mod analysis;
pub mod error;
pub mod ingest;
pub mod output;
pub mod simulate;

pub use analysis::{analyze, run_analysis, AnalysisSettings, ConstraintArg, ResultRecord, RunConfig, TestChoice};
pub use error::{CliError, Result};
pub use ingest::{ingest, DesignSource};
pub use simulate::{run_simulation, SimulationConfig};
