use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tgsim_core::{Batch, NodeRef, Schema};

use super::graph::GraphFile;
use super::{read_text, to_json, write_text, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchFile {
    graph: GraphFile,
    targets: BTreeMap<u32, Vec<f64>>,
    mask: Vec<u32>,
}

pub fn dataset_to_json(batches: &[Batch]) -> String {
    let files: Vec<BatchFile> = batches
        .iter()
        .map(|b| BatchFile {
            graph: GraphFile::from_snapshot(&b.graph),
            targets: b.targets.iter().map(|(k, v)| (k.0, v.clone())).collect(),
            mask: b.mask.iter().map(|k| k.0).collect(),
        })
        .collect();
    to_json(&files)
}

/// Parses a dataset; all graphs must share one schema.
pub fn dataset_from_json(text: &str) -> Result<Vec<Batch>, FormatError> {
    let files: Vec<BatchFile> = serde_json::from_str(text).map_err(|e| FormatError::json("dataset", e))?;
    let mut schema: Option<Arc<Schema>> = None;
    let mut out = Vec::with_capacity(files.len());
    for (i, f) in files.into_iter().enumerate() {
        let g = f.graph.to_snapshot(schema.as_ref()).map_err(|e| FormatError::Invalid(format!("batch {i}: {e}")))?;
        if schema.is_none() {
            schema = Some(Arc::clone(g.schema_arc()));
        }
        for id in f.targets.keys().chain(&f.mask) {
            if !g.contains_node(NodeRef(*id)) {
                return Err(FormatError::Invalid(format!("batch {i}: target or mask node n{id} is not in the graph")));
            }
        }
        out.push(Batch {
            graph: Arc::new(g),
            targets: f.targets.into_iter().map(|(k, v)| (NodeRef(k), v)).collect(),
            mask: f.mask.into_iter().map(NodeRef).collect::<BTreeSet<_>>(),
        });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Batch>, FormatError> {
    dataset_from_json(&read_text(path)?).map_err(|e| match e {
        FormatError::Json { source, .. } => FormatError::json(path.display().to_string(), source),
        other => other,
    })
}

pub fn write_dataset(path: &Path, batches: &[Batch]) -> Result<(), FormatError> {
    write_text(path, &dataset_to_json(batches))
}
