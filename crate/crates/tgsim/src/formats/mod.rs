//! On-disk formats: scenario, graph, model and dataset files are JSON,
//! trajectories are CSV. Floats are written in shortest round-trip form so
//! serialize → parse → serialize is byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

mod dataset;
mod graph;
mod model;
mod report;
mod scenario;
mod trajectory;

pub use dataset::{dataset_from_json, dataset_to_json, read_dataset, write_dataset};
pub use graph::{graph_from_json, graph_to_json, read_graph, write_graph, GraphFile};
pub use model::{model_from_json, model_to_json, read_model, write_model};
pub use report::{report_to_json, report_to_text};
pub use scenario::{parse_scenario, read_scenario};
pub use trajectory::{read_trajectory, trajectory_from_csv, trajectory_to_csv, write_trajectory, CSV_HEADER};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read '{path}': {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write '{path}': {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("invalid scenario: {0}")]
    Scenario(#[from] tgsim_core::ScenarioError),
    #[error("invalid graph: {0}")]
    Graph(#[from] tgsim_core::GraphError),
    #[error("invalid model: {0}")]
    Model(#[from] tgsim_core::HgtError),
    #[error("trajectory line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl FormatError {
    /// True when the input itself is at fault (as opposed to the filesystem).
    pub fn is_validation(&self) -> bool {
        !matches!(self, FormatError::Write { .. })
    }

    fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        FormatError::Json { context: context.into(), source }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Read { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Write { path: path.to_path_buf(), source })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}
