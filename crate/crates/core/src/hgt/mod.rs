//! Heterogeneous graph transformer.
//!
//! Each layer aggregates, for every target node `v`, attention-weighted
//! messages from its in-neighbours and adds the result back through a
//! type-specific output projection:
//!
//! ```text
//! score_i(u,e,v) = (K(u)^i · W_att[ψ(e),i] · Q(v)^i) · mu[ψ(e)] / sqrt(d/h)
//! alpha_i        = softmax over N(v) of score_i
//! H~[v]^i        = Σ_{(u,e)} alpha_i(u,e,v) · (V(u)^i · W_msg[ψ(e),i])
//! H[v]           = A_φ(v)(gelu(H~[v])) + H_prev[v]
//! ```
//!
//! `K`, `Q`, `V` and `A` are chosen by node type, `W_att`, `W_msg` and the
//! prior `mu` by edge type. Edge features enter through a per-edge-type
//! projection added to the source representation before `K` and `V`; with a
//! zero projection (or featureless edge types) the layer is exactly the
//! node-only form above.
//!
//! Gradients are hand-derived (see `backward`) and checked against central
//! finite differences by [`grad_check`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{GraphError, GraphSnapshot, NodeRef};

mod backward;
mod forward;
mod params;
mod train;
mod view;

pub use forward::{attention_weights, embed, model_forward, HgtLayerParams};
pub use params::{ModelConfig, ModelParams, TensorInfo};
pub use train::{fine_tune, grad_check, loss_and_grad, mse_loss, train, TrainOutput};
pub use view::GraphView;

#[derive(Debug, Clone, PartialEq)]
pub enum HgtError {
    Config(String),
    SchemaMismatch,
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    NonFinite(&'static str),
    EmptyTargets,
    EmptyDataset,
    InvalidTarget(NodeRef),
    MissingPrediction(NodeRef),
    UnknownTensor(String),
    Graph(GraphError),
}

impl fmt::Display for HgtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HgtError::Config(m) => write!(f, "invalid model config: {m}"),
            HgtError::SchemaMismatch => write!(f, "graph schema does not match the model schema"),
            HgtError::ShapeMismatch { what, expected, got } => {
                write!(f, "{what}: expected {expected} values, got {got}")
            }
            HgtError::NonFinite(what) => write!(f, "non-finite value in {what} (diverged?)"),
            HgtError::EmptyTargets => write!(f, "no unmasked targets"),
            HgtError::EmptyDataset => write!(f, "dataset has no batch with targets"),
            HgtError::InvalidTarget(v) => write!(f, "target {v} is not a readout node of the graph"),
            HgtError::MissingPrediction(v) => write!(f, "no prediction for target {v}"),
            HgtError::UnknownTensor(n) => write!(f, "unknown or missing tensor '{n}'"),
            HgtError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for HgtError {}

impl From<GraphError> for HgtError {
    fn from(e: GraphError) -> Self {
        HgtError::Graph(e)
    }
}

/// One supervised example: a sealed snapshot, target vectors for readout
/// nodes, and nodes excluded from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub graph: Arc<GraphSnapshot>,
    pub targets: BTreeMap<NodeRef, Vec<f64>>,
    pub mask: BTreeSet<NodeRef>,
}

impl Batch {
    /// Targets that count towards the loss.
    pub fn active_targets(&self) -> impl Iterator<Item = (&NodeRef, &Vec<f64>)> + '_ {
        self.targets.iter().filter(move |(v, _)| !self.mask.contains(v))
    }

    pub fn active_count(&self) -> usize {
        self.active_targets().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests;
