use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {message}", path.display())]
    Write { path: PathBuf, message: String },

    #[error("{}: {message}", path.display())]
    Table { path: PathBuf, message: String },

    #[error("{}, line {line}, column '{column}': {message}", path.display())]
    Cell {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("duplicate sample id '{id}' in {}", path.display())]
    DuplicateId { path: PathBuf, id: String },

    #[error(
        "sample ids differ between tables (only in counts: [{}]; only in covariates: [{}])",
        only_in_counts.join(", "),
        only_in_covariates.join(", ")
    )]
    SampleMismatch {
        only_in_counts: Vec<String>,
        only_in_covariates: Vec<String>,
    },

    #[error("design is rank deficient; linearly dependent columns: [{}]", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("sample '{id}' has no positive counts")]
    EmptySample { id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] foldfit::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Read { .. } => "read",
            Self::Write { .. } => "write",
            Self::Table { .. } => "table",
            Self::Cell { .. } => "cell",
            Self::DuplicateId { .. } => "duplicate-id",
            Self::SampleMismatch { .. } => "sample-mismatch",
            Self::RankDeficient { .. } => "rank-deficient",
            Self::EmptySample { .. } => "empty-sample",
            Self::Config(_) => "config",
            Self::Model(_) => "model",
        }
    }

    /// Machine-readable error document.
    pub fn report(&self) -> Value {
        let mut details = json!({});
        match self {
            Self::Read { path, .. } | Self::Write { path, .. } | Self::Table { path, .. } => {
                details["path"] = json!(path);
            }
            Self::Cell { path, line, column, .. } => {
                details = json!({ "path": path, "line": line, "column": column });
            }
            Self::DuplicateId { path, id } => details = json!({ "path": path, "id": id }),
            Self::SampleMismatch { only_in_counts, only_in_covariates } => {
                details = json!({ "only_in_counts": only_in_counts, "only_in_covariates": only_in_covariates });
            }
            Self::RankDeficient { columns } => details = json!({ "columns": columns }),
            Self::EmptySample { id } => details = json!({ "sample_id": id }),
            Self::Model(foldfit::Error::InvalidCount { row, col, value }) => {
                details = json!({ "row": row, "col": col, "value": value });
            }
            Self::Config(_) | Self::Model(_) => {}
        }
        json!({
            "schema_version": 1,
            "error": { "kind": self.kind(), "message": self.to_string(), "details": details },
        })
    }
}
