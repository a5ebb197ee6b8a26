use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{GraphSnapshot, NodeRef};

/// Dense, read-only view of a snapshot: nodes renumbered `0..n` in
/// insertion order and in-edges grouped by target (CSR), each group in
/// insertion order.
#[derive(Debug, Clone)]
pub struct GraphView<'g> {
    pub refs: Vec<NodeRef>,
    pub kind: Vec<usize>,
    pub feat: Vec<&'g [f64]>,
    /// edges of target `v` are `in_start[v]..in_start[v + 1]`
    pub in_start: Vec<usize>,
    pub src: Vec<usize>,
    pub edge_kind: Vec<usize>,
    pub edge_feat: Vec<&'g [f64]>,
}

impl<'g> GraphView<'g> {
    pub fn new(g: &'g GraphSnapshot) -> Self {
        let mut dense = vec![u32::MAX; g.next_node_id() as usize];
        let mut refs = Vec::with_capacity(g.node_count());
        let mut kind = Vec::with_capacity(g.node_count());
        let mut feat = Vec::with_capacity(g.node_count());
        for n in g.nodes() {
            dense[n.id.0 as usize] = refs.len() as u32;
            refs.push(n.id);
            kind.push(n.kind.0 as usize);
            feat.push(n.features);
        }
        let mut in_start = Vec::with_capacity(refs.len() + 1);
        let mut src = Vec::with_capacity(g.edge_count());
        let mut edge_kind = Vec::with_capacity(g.edge_count());
        let mut edge_feat = Vec::with_capacity(g.edge_count());
        in_start.push(0);
        for v in &refs {
            for e in g.in_edges(*v).expect("live node") {
                let e = g.edge(*e).expect("live edge");
                src.push(dense[e.src.0 as usize] as usize);
                edge_kind.push(e.kind.0 as usize);
                edge_feat.push(e.features);
            }
            in_start.push(src.len());
        }
        Self { refs, kind, feat, in_start, src, edge_kind, edge_feat }
    }

    pub fn node_count(&self) -> usize {
        self.refs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}
