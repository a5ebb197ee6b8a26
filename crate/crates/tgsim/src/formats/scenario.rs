use std::path::Path;

use tgsim_core::{ScenarioDef, ScenarioSpec};

use super::{read_text, FormatError};

/// Parses and validates scenario JSON.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, FormatError> {
    let def: ScenarioDef = serde_json::from_str(text).map_err(|e| FormatError::json("scenario", e))?;
    Ok(ScenarioSpec::from_def(def)?)
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec, FormatError> {
    parse_scenario(&read_text(path)?).map_err(|e| match e {
        FormatError::Json { source, .. } => FormatError::json(path.display().to_string(), source),
        other => other,
    })
}
