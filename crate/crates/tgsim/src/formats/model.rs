use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tgsim_core::{ModelConfig, ModelParams};

use super::graph::SchemaFile;
use super::{read_text, to_json, write_text, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorFile {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    config: ModelConfig,
    schema: SchemaFile,
    tensors: Vec<TensorFile>,
}

pub fn model_to_json(m: &ModelParams) -> String {
    let file = ModelFile {
        config: m.config.clone(),
        schema: SchemaFile::from_schema(m.schema()),
        tensors: m
            .tensors()
            .iter()
            .map(|t| TensorFile {
                name: t.name.clone(),
                shape: t.shape.clone(),
                values: m.values()[t.offset..t.offset + t.len()].to_vec(),
            })
            .collect(),
    };
    to_json(&file)
}

pub fn model_from_json(text: &str) -> Result<ModelParams, FormatError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| FormatError::json("model", e))?;
    let schema = Arc::new(file.schema.to_schema()?);
    let mut tensors = BTreeMap::new();
    for t in file.tensors {
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(FormatError::Invalid(format!("tensor '{}' shape does not match its values", t.name)));
        }
        if tensors.insert(t.name.clone(), t.values).is_some() {
            return Err(FormatError::Invalid(format!("duplicate tensor '{}'", t.name)));
        }
    }
    Ok(ModelParams::from_tensors(file.config, schema, &tensors)?)
}

pub fn read_model(path: &Path) -> Result<ModelParams, FormatError> {
    model_from_json(&read_text(path)?).map_err(|e| match e {
        FormatError::Json { source, .. } => FormatError::json(path.display().to_string(), source),
        other => other,
    })
}

pub fn write_model(path: &Path, m: &ModelParams) -> Result<(), FormatError> {
    write_text(path, &model_to_json(m))
}
