use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tgsim_core::graph::{EdgeType, NodeType};
use tgsim_core::{GraphSnapshot, NodeRef, Schema};

use super::{read_text, to_json, write_text, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTypeFile {
    pub name: String,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeTypeFile {
    pub name: String,
    pub src_kind: String,
    pub dst_kind: String,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub node_types: Vec<NodeTypeFile>,
    pub edge_types: Vec<EdgeTypeFile>,
}

impl SchemaFile {
    pub fn from_schema(s: &Schema) -> Self {
        Self {
            node_types: s
                .node_types()
                .iter()
                .map(|t| NodeTypeFile { name: t.name.clone(), feature_dim: t.feature_dim })
                .collect(),
            edge_types: s
                .edge_types()
                .iter()
                .map(|t| EdgeTypeFile {
                    name: t.name.clone(),
                    src_kind: t.src_kind.clone(),
                    dst_kind: t.dst_kind.clone(),
                    feature_dim: t.feature_dim,
                })
                .collect(),
        }
    }

    pub fn to_schema(&self) -> Result<Schema, FormatError> {
        let nodes = self
            .node_types
            .iter()
            .map(|t| NodeType { name: t.name.clone(), feature_dim: t.feature_dim })
            .collect();
        let edges = self
            .edge_types
            .iter()
            .map(|t| EdgeType {
                name: t.name.clone(),
                src_kind: t.src_kind.clone(),
                dst_kind: t.dst_kind.clone(),
                feature_dim: t.feature_dim,
            })
            .collect();
        Ok(Schema::new(nodes, edges)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: u32,
    #[serde(rename = "type")]
    pub ty: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFile {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    #[serde(rename = "type")]
    pub ty: String,
    pub features: Vec<f64>,
}

/// Serialized snapshot; arrays are in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub schema: SchemaFile,
    pub timestamp: u64,
    pub nodes: Vec<NodeFile>,
    pub edges: Vec<EdgeFile>,
}

impl GraphFile {
    pub fn from_snapshot(g: &GraphSnapshot) -> Self {
        let s = g.schema();
        Self {
            schema: SchemaFile::from_schema(s),
            timestamp: g.timestamp(),
            nodes: g
                .nodes()
                .map(|n| NodeFile { id: n.id.0, ty: s.node_type(n.kind).name.clone(), features: n.features.to_vec() })
                .collect(),
            edges: g
                .edges()
                .map(|e| EdgeFile {
                    id: e.id.0,
                    src: e.src.0,
                    dst: e.dst.0,
                    ty: s.edge_type(e.kind).name.clone(),
                    features: e.features.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds a sealed snapshot. `schema` lets callers share one schema
    /// between many graphs; it must equal the file's schema.
    pub fn to_snapshot(&self, schema: Option<&Arc<Schema>>) -> Result<GraphSnapshot, FormatError> {
        let own = self.schema.to_schema()?;
        let schema = match schema {
            Some(s) if **s == own => Arc::clone(s),
            Some(_) => return Err(FormatError::Invalid("graph schema differs from the expected schema".into())),
            None => Arc::new(own),
        };
        let mut g = GraphSnapshot::new(schema, self.timestamp);
        for n in &self.nodes {
            let next_edge = g.next_edge_id();
            g.skip_ids_to(n.id, next_edge)?;
            g.add_node(&n.ty, &n.features)?;
        }
        for e in &self.edges {
            let next_node = g.next_node_id();
            g.skip_ids_to(next_node, e.id)?;
            g.add_edge(NodeRef(e.src), NodeRef(e.dst), &e.ty, &e.features)?;
        }
        Ok(g.seal())
    }
}

pub fn graph_to_json(g: &GraphSnapshot) -> String {
    to_json(&GraphFile::from_snapshot(g))
}

pub fn graph_from_json(text: &str) -> Result<GraphSnapshot, FormatError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| FormatError::json("graph", e))?;
    file.to_snapshot(None)
}

pub fn read_graph(path: &Path) -> Result<GraphSnapshot, FormatError> {
    graph_from_json(&read_text(path)?).map_err(|e| match e {
        FormatError::Json { source, .. } => FormatError::json(path.display().to_string(), source),
        other => other,
    })
}

pub fn write_graph(path: &Path, g: &GraphSnapshot) -> Result<(), FormatError> {
    write_text(path, &graph_to_json(g))
}
