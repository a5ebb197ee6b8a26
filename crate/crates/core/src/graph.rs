//! Typed dynamic graph store.
//!
//! A [`GraphSnapshot`] is one static graph of the time-indexed sequence that
//! models the traffic system. Every node carries exactly one node type and
//! every directed edge exactly one edge type; each type fixes the length of
//! the feature vectors its members carry. Snapshots are built unsealed by a
//! single writer and then sealed, after which they are immutable values that
//! can be shared freely between threads.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

/// Declaration of one node type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    pub feature_dim: usize,
}

/// Declaration of one directed relation type with its endpoint node types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub src_kind: String,
    pub dst_kind: String,
    pub feature_dim: usize,
}

/// Index of a node type within a [`Schema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKind(pub u16);

/// Index of an edge type within a [`Schema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKind(pub u16);

/// Stable node identifier. Assigned monotonically within a snapshot lineage
/// and never reused, even after removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef(pub u32);

/// Stable edge identifier, same lifetime rules as [`NodeRef`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeRef(pub u32);

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    DuplicateNodeType(String),
    DuplicateEdgeType(String),
    UnknownEndpointKind { edge_type: String, kind: String },
    UnknownNodeType(String),
    UnknownEdgeType(String),
    Sealed,
    DimensionMismatch { kind: String, expected: usize, got: usize },
    NonFiniteFeature { kind: String, index: usize },
    MissingNode(NodeRef),
    MissingEdge(EdgeRef),
    EndpointKindMismatch { edge_type: String, expected: String, found: String },
    SelfLoop(NodeRef),
    /// restored id lies below the snapshot's id sequence
    IdRegression { next: u32, requested: u32 },
    ParallelEdge { src: NodeRef, dst: NodeRef, edge_type: String },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::DuplicateNodeType(n) => write!(f, "duplicate node type '{n}'"),
            GraphError::DuplicateEdgeType(n) => write!(f, "duplicate edge type '{n}'"),
            GraphError::UnknownEndpointKind { edge_type, kind } => {
                write!(f, "edge type '{edge_type}' references unknown node type '{kind}'")
            }
            GraphError::UnknownNodeType(n) => write!(f, "unknown node type '{n}'"),
            GraphError::UnknownEdgeType(n) => write!(f, "unknown edge type '{n}'"),
            GraphError::Sealed => write!(f, "snapshot is sealed"),
            GraphError::DimensionMismatch { kind, expected, got } => write!(
                f,
                "type '{kind}' expects {expected} features, got {got}"
            ),
            GraphError::NonFiniteFeature { kind, index } => {
                write!(f, "non-finite feature at index {index} for type '{kind}'")
            }
            GraphError::MissingNode(v) => write!(f, "node {v} does not exist"),
            GraphError::MissingEdge(e) => write!(f, "edge {e} does not exist"),
            GraphError::EndpointKindMismatch { edge_type, expected, found } => write!(
                f,
                "edge type '{edge_type}' expects endpoint '{expected}', found '{found}'"
            ),
            GraphError::IdRegression { next, requested } => {
                write!(f, "id {requested} is below the next free id {next}")
            }
            GraphError::SelfLoop(v) => write!(f, "self-loop on {v} rejected"),
            GraphError::ParallelEdge { src, dst, edge_type } => {
                write!(f, "edge '{edge_type}' {src}->{dst} already exists")
            }
        }
    }
}

impl core::error::Error for GraphError {}

/// Node and edge type declarations shared by all snapshots of a lineage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<NodeType>,
    edge_types: Vec<EdgeType>,
    // resolved (src, dst) node kind per edge type
    endpoints: Vec<(NodeKind, NodeKind)>,
}

impl Schema {
    pub fn new(node_types: Vec<NodeType>, edge_types: Vec<EdgeType>) -> Result<Self, GraphError> {
        for (i, n) in node_types.iter().enumerate() {
            if node_types[..i].iter().any(|m| m.name == n.name) {
                return Err(GraphError::DuplicateNodeType(n.name.clone()));
            }
        }
        let find = |name: &str| node_types.iter().position(|n| n.name == name);
        let mut endpoints = Vec::with_capacity(edge_types.len());
        for (i, e) in edge_types.iter().enumerate() {
            if edge_types[..i].iter().any(|m| m.name == e.name) {
                return Err(GraphError::DuplicateEdgeType(e.name.clone()));
            }
            let resolve = |kind: &String| {
                find(kind).map(|k| NodeKind(k as u16)).ok_or_else(|| GraphError::UnknownEndpointKind {
                    edge_type: e.name.clone(),
                    kind: kind.clone(),
                })
            };
            let src = resolve(&e.src_kind)?;
            let dst = resolve(&e.dst_kind)?;
            endpoints.push((src, dst));
        }
        Ok(Self { node_types, edge_types, endpoints })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn node_kind(&self, name: &str) -> Option<NodeKind> {
        self.node_types.iter().position(|n| n.name == name).map(|i| NodeKind(i as u16))
    }

    pub fn edge_kind(&self, name: &str) -> Option<EdgeKind> {
        self.edge_types.iter().position(|e| e.name == name).map(|i| EdgeKind(i as u16))
    }

    pub fn node_type(&self, kind: NodeKind) -> &NodeType {
        &self.node_types[kind.0 as usize]
    }

    pub fn edge_type(&self, kind: EdgeKind) -> &EdgeType {
        &self.edge_types[kind.0 as usize]
    }

    /// Declared (source, target) node kinds of an edge type.
    pub fn endpoints(&self, kind: EdgeKind) -> (NodeKind, NodeKind) {
        self.endpoints[kind.0 as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NodeSlot {
    kind: NodeKind,
    features: Vec<f64>,
    in_edges: Vec<EdgeRef>,
    out_edges: Vec<EdgeRef>,
}

#[derive(Debug, Clone, PartialEq)]
struct EdgeSlot {
    src: NodeRef,
    dst: NodeRef,
    kind: EdgeKind,
    features: Vec<f64>,
}

/// Borrowed view of one stored edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeView<'a> {
    pub id: EdgeRef,
    pub src: NodeRef,
    pub dst: NodeRef,
    pub kind: EdgeKind,
    pub features: &'a [f64],
}

/// Borrowed view of one stored node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView<'a> {
    pub id: NodeRef,
    pub kind: NodeKind,
    pub features: &'a [f64],
}

/// One timestamped static graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    schema: Arc<Schema>,
    timestamp: u64,
    // slot index == id; `None` marks a tombstone
    nodes: Vec<Option<NodeSlot>>,
    edges: Vec<Option<EdgeSlot>>,
    node_count: usize,
    edge_count: usize,
    sealed: bool,
}

impl GraphSnapshot {
    pub fn new(schema: Arc<Schema>, timestamp: u64) -> Self {
        Self {
            schema,
            timestamp,
            nodes: Vec::new(),
            edges: Vec::new(),
            node_count: 0,
            edge_count: 0,
            sealed: false,
        }
    }

    /// Unsealed copy that continues this snapshot's id sequence, so refs
    /// minted in the copy never collide with refs of its ancestors.
    pub fn fork(&self, timestamp: u64) -> Self {
        let mut g = self.clone();
        g.timestamp = timestamp;
        g.sealed = false;
        g
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Id that the next inserted node will receive.
    pub fn next_node_id(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn next_edge_id(&self) -> u32 {
        self.edges.len() as u32
    }

    pub fn seal(mut self) -> Self {
        self.sealed = true;
        self
    }

    fn check_features(&self, kind_name: &str, expected: usize, features: &[f64]) -> Result<(), GraphError> {
        if features.len() != expected {
            return Err(GraphError::DimensionMismatch {
                kind: kind_name.into(),
                expected,
                got: features.len(),
            });
        }
        if let Some(index) = features.iter().position(|x| !x.is_finite()) {
            return Err(GraphError::NonFiniteFeature { kind: kind_name.into(), index });
        }
        Ok(())
    }

    pub fn add_node(&mut self, kind: &str, features: &[f64]) -> Result<NodeRef, GraphError> {
        let k = self
            .schema
            .node_kind(kind)
            .ok_or_else(|| GraphError::UnknownNodeType(kind.into()))?;
        self.add_node_of(k, features)
    }

    pub fn add_node_of(&mut self, kind: NodeKind, features: &[f64]) -> Result<NodeRef, GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let ty = self.schema.node_type(kind);
        self.check_features(&ty.name, ty.feature_dim, features)?;
        let id = NodeRef(self.nodes.len() as u32);
        self.nodes.push(Some(NodeSlot {
            kind,
            features: features.to_vec(),
            in_edges: Vec::new(),
            out_edges: Vec::new(),
        }));
        self.node_count += 1;
        Ok(id)
    }

    /// Advances the id sequences so the next node and edge ids are exactly
    /// `node` and `edge`; skipped ids become tombstones. Used to restore
    /// snapshots whose ids have gaps.
    pub fn skip_ids_to(&mut self, node: u32, edge: u32) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        for (next, requested) in [(self.next_node_id(), node), (self.next_edge_id(), edge)] {
            if requested < next {
                return Err(GraphError::IdRegression { next, requested });
            }
        }
        self.nodes.resize_with(node as usize, || None);
        self.edges.resize_with(edge as usize, || None);
        Ok(())
    }

    pub fn add_edge(&mut self, src: NodeRef, dst: NodeRef, kind: &str, features: &[f64]) -> Result<EdgeRef, GraphError> {
        let k = self
            .schema
            .edge_kind(kind)
            .ok_or_else(|| GraphError::UnknownEdgeType(kind.into()))?;
        self.add_edge_of(src, dst, k, features)
    }

    pub fn add_edge_of(
        &mut self,
        src: NodeRef,
        dst: NodeRef,
        kind: EdgeKind,
        features: &[f64],
    ) -> Result<EdgeRef, GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let schema = Arc::clone(&self.schema);
        let ty = schema.edge_type(kind);
        let (want_src, want_dst) = schema.endpoints(kind);
        let src_kind = self.slot(src)?.kind;
        let dst_kind = self.slot(dst)?.kind;
        for (want, found) in [(want_src, src_kind), (want_dst, dst_kind)] {
            if want != found {
                return Err(GraphError::EndpointKindMismatch {
                    edge_type: ty.name.clone(),
                    expected: schema.node_type(want).name.clone(),
                    found: schema.node_type(found).name.clone(),
                });
            }
        }
        if src == dst {
            return Err(GraphError::SelfLoop(src));
        }
        self.check_features(&ty.name, ty.feature_dim, features)?;
        let duplicate = self.slot(src)?.out_edges.iter().any(|e| {
            let slot = self.edges[e.0 as usize].as_ref().expect("live out-edge");
            slot.dst == dst && slot.kind == kind
        });
        if duplicate {
            return Err(GraphError::ParallelEdge { src, dst, edge_type: ty.name.clone() });
        }
        let id = EdgeRef(self.edges.len() as u32);
        self.edges.push(Some(EdgeSlot { src, dst, kind, features: features.to_vec() }));
        self.slot_mut(src)?.out_edges.push(id);
        self.slot_mut(dst)?.in_edges.push(id);
        self.edge_count += 1;
        Ok(id)
    }

    /// Replaces the feature vector of an existing node.
    pub fn set_node_features(&mut self, v: NodeRef, features: &[f64]) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let kind = self.slot(v)?.kind;
        let ty = self.schema.node_type(kind);
        self.check_features(&ty.name, ty.feature_dim, features)?;
        self.slot_mut(v)?.features.copy_from_slice(features);
        Ok(())
    }

    pub fn remove_edge(&mut self, e: EdgeRef) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let slot = self
            .edges
            .get_mut(e.0 as usize)
            .and_then(Option::take)
            .ok_or(GraphError::MissingEdge(e))?;
        self.slot_mut(slot.src)?.out_edges.retain(|x| *x != e);
        self.slot_mut(slot.dst)?.in_edges.retain(|x| *x != e);
        self.edge_count -= 1;
        Ok(())
    }

    /// Removes a node together with all incident edges. The ids are tombstoned.
    pub fn remove_node(&mut self, v: NodeRef) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let slot = self.slot(v)?;
        let incident: Vec<EdgeRef> = slot.in_edges.iter().chain(slot.out_edges.iter()).copied().collect();
        for e in incident {
            self.remove_edge(e)?;
        }
        self.nodes[v.0 as usize] = None;
        self.node_count -= 1;
        Ok(())
    }

    fn slot(&self, v: NodeRef) -> Result<&NodeSlot, GraphError> {
        self.nodes
            .get(v.0 as usize)
            .and_then(Option::as_ref)
            .ok_or(GraphError::MissingNode(v))
    }

    fn slot_mut(&mut self, v: NodeRef) -> Result<&mut NodeSlot, GraphError> {
        self.nodes
            .get_mut(v.0 as usize)
            .and_then(Option::as_mut)
            .ok_or(GraphError::MissingNode(v))
    }

    pub fn contains_node(&self, v: NodeRef) -> bool {
        self.slot(v).is_ok()
    }

    pub fn node(&self, v: NodeRef) -> Option<NodeView<'_>> {
        self.slot(v)
            .ok()
            .map(|s| NodeView { id: v, kind: s.kind, features: &s.features })
    }

    pub fn node_kind(&self, v: NodeRef) -> Option<NodeKind> {
        self.slot(v).ok().map(|s| s.kind)
    }

    pub fn node_features(&self, v: NodeRef) -> Option<&[f64]> {
        self.slot(v).ok().map(|s| s.features.as_slice())
    }

    pub fn edge(&self, e: EdgeRef) -> Option<EdgeView<'_>> {
        self.edges.get(e.0 as usize).and_then(Option::as_ref).map(|s| EdgeView {
            id: e,
            src: s.src,
            dst: s.dst,
            kind: s.kind,
            features: &s.features,
        })
    }

    /// Live nodes in insertion order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeView<'_>> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, s)| {
            s.as_ref().map(|s| NodeView { id: NodeRef(i as u32), kind: s.kind, features: &s.features })
        })
    }

    /// Live edges in insertion order.
    pub fn edges(&self) -> impl Iterator<Item = EdgeView<'_>> + '_ {
        self.edges.iter().enumerate().filter_map(|(i, s)| {
            s.as_ref().map(|s| EdgeView {
                id: EdgeRef(i as u32),
                src: s.src,
                dst: s.dst,
                kind: s.kind,
                features: &s.features,
            })
        })
    }

    /// Incoming edges of `v` in insertion order, optionally filtered by type.
    pub fn in_neighbors(&self, v: NodeRef, kind: Option<EdgeKind>) -> Result<Vec<(NodeRef, EdgeRef)>, GraphError> {
        let slot = self.slot(v)?;
        Ok(slot
            .in_edges
            .iter()
            .filter_map(|e| {
                let edge = self.edges[e.0 as usize].as_ref().expect("live in-edge");
                match kind {
                    Some(k) if k != edge.kind => None,
                    _ => Some((edge.src, *e)),
                }
            })
            .collect())
    }

    /// In-edge ids of `v` without allocating.
    pub fn in_edges(&self, v: NodeRef) -> Result<&[EdgeRef], GraphError> {
        Ok(&self.slot(v)?.in_edges)
    }

    /// Total number of stored node feature scalars.
    pub fn stored_node_scalars(&self) -> usize {
        self.nodes().map(|n| n.features.len()).sum()
    }
}
