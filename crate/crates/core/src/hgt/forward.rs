use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::params::LayerSlots;
use super::view::GraphView;
use super::{HgtError, ModelParams};
use crate::graph::{GraphSnapshot, NodeRef};
use crate::math::{exp, gelu, sqrt};

/// `y = W x` for row-major `W` of shape `rows × x.len()`.
pub(super) fn matvec(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *yr = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `y += W x`.
pub(super) fn matvec_add(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += Wᵀ x` for `W` of shape `x.len() × y.len()`.
pub(super) fn matvec_t_add(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = y.len();
    for (r, xr) in x.iter().enumerate() {
        if *xr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, wc) in y.iter_mut().zip(row) {
            *yc += xr * wc;
        }
    }
}

/// `G += a bᵀ`.
pub(super) fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, ar) in a.iter().enumerate() {
        if *ar == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gc, bc) in row.iter_mut().zip(b) {
            *gc += ar * bc;
        }
    }
}

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<(), HgtError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HgtError::NonFinite(what))
    }
}

pub(super) fn check_schema(model: &ModelParams, g: &GraphSnapshot) -> Result<(), HgtError> {
    if core::ptr::eq(&**model.schema(), g.schema()) || **model.schema() == *g.schema() {
        Ok(())
    } else {
        Err(HgtError::SchemaMismatch)
    }
}

/// Intermediates of one layer, kept for the backward pass.
pub(super) struct LayerCache {
    /// n × d
    pub q: Vec<f64>,
    /// per edge, m × d: source state plus projected edge features
    pub s: Vec<f64>,
    pub k: Vec<f64>,
    pub val: Vec<f64>,
    /// per edge and head, `W_att q`
    pub wq: Vec<f64>,
    /// m × h, `k · W_att q` before scaling
    pub raw: Vec<f64>,
    pub alpha: Vec<f64>,
    /// per edge and head, `W_msgᵀ v`
    pub msg: Vec<f64>,
    /// n × d aggregated messages before the activation
    pub ht: Vec<f64>,
}

pub(super) fn layer_forward_cached(
    p: &[f64],
    slots: &LayerSlots,
    d: usize,
    heads: usize,
    g: &GraphView<'_>,
    h: &[f64],
) -> (Vec<f64>, LayerCache) {
    let n = g.node_count();
    let m = g.edge_count();
    let dk = d / heads;
    let scale = 1.0 / sqrt(dk as f64);
    let dd = d * d;
    let hkk = heads * dk * dk;

    let mut q = vec![0.0; n * d];
    for v in 0..n {
        let ns = &slots.node[g.kind[v]];
        matvec(&p[ns.q..ns.q + dd], &h[v * d..(v + 1) * d], &mut q[v * d..(v + 1) * d]);
    }

    let mut s = vec![0.0; m * d];
    let mut k = vec![0.0; m * d];
    let mut val = vec![0.0; m * d];
    for e in 0..m {
        let u = g.src[e];
        let es = &slots.edge[g.edge_kind[e]];
        let se = &mut s[e * d..(e + 1) * d];
        se.copy_from_slice(&h[u * d..(u + 1) * d]);
        let f = g.edge_feat[e];
        if !f.is_empty() {
            matvec_add(&p[es.feat..es.feat + d * f.len()], f, se);
        }
        let ns = &slots.node[g.kind[u]];
        matvec(&p[ns.k..ns.k + dd], se, &mut k[e * d..(e + 1) * d]);
        matvec(&p[ns.v..ns.v + dd], se, &mut val[e * d..(e + 1) * d]);
    }

    let mut wq = vec![0.0; m * d];
    let mut raw = vec![0.0; m * heads];
    let mut alpha = vec![0.0; m * heads];
    let mut msg = vec![0.0; m * d];
    let mut ht = vec![0.0; n * d];
    let mut out = vec![0.0; n * d];
    let mut z = vec![0.0; d];
    for v in 0..n {
        let (lo, hi) = (g.in_start[v], g.in_start[v + 1]);
        for e in lo..hi {
            let es = &slots.edge[g.edge_kind[e]];
            let att = &p[es.att..es.att + hkk];
            let wmsg = &p[es.msg..es.msg + hkk];
            for i in 0..heads {
                let blk = i * dk * dk;
                let hd = e * d + i * dk;
                matvec(&att[blk..blk + dk * dk], &q[v * d + i * dk..v * d + (i + 1) * dk], &mut wq[hd..hd + dk]);
                raw[e * heads + i] = dot(&k[hd..hd + dk], &wq[hd..hd + dk]);
                matvec_t_add(&wmsg[blk..blk + dk * dk], &val[hd..hd + dk], &mut msg[hd..hd + dk]);
            }
        }
        for i in 0..heads {
            if lo == hi {
                break;
            }
            let mut best = f64::NEG_INFINITY;
            for e in lo..hi {
                let mu = p[slots.edge[g.edge_kind[e]].mu];
                let sc = raw[e * heads + i] * mu * scale;
                alpha[e * heads + i] = sc;
                best = best.max(sc);
            }
            let mut total = 0.0;
            for e in lo..hi {
                let w = exp(alpha[e * heads + i] - best);
                alpha[e * heads + i] = w;
                total += w;
            }
            for e in lo..hi {
                let a = alpha[e * heads + i] / total;
                alpha[e * heads + i] = a;
                let hd = e * d + i * dk;
                let dst = &mut ht[v * d + i * dk..v * d + (i + 1) * dk];
                for (t, mv) in dst.iter_mut().zip(&msg[hd..hd + dk]) {
                    *t += a * mv;
                }
            }
        }
        for (zj, hj) in z.iter_mut().zip(&ht[v * d..(v + 1) * d]) {
            *zj = gelu(*hj);
        }
        let ns = &slots.node[g.kind[v]];
        let o = &mut out[v * d..(v + 1) * d];
        o.copy_from_slice(&h[v * d..(v + 1) * d]);
        for (oj, bj) in o.iter_mut().zip(&p[ns.a_bias..ns.a_bias + d]) {
            *oj += bj;
        }
        matvec_add(&p[ns.a..ns.a + dd], &z, o);
    }
    (out, LayerCache { q, s, k, val, wq, raw, alpha, msg, ht })
}

pub(super) fn embed_view(model: &ModelParams, g: &GraphView<'_>) -> Result<Vec<f64>, HgtError> {
    let d = model.config.hidden;
    let lay = &model.layout;
    let mut h = vec![0.0; g.node_count() * d];
    for v in 0..g.node_count() {
        let t = g.kind[v];
        let x = g.feat[v];
        let hv = &mut h[v * d..(v + 1) * d];
        hv.copy_from_slice(&model.values[lay.embed_b[t]..lay.embed_b[t] + d]);
        if !x.is_empty() {
            matvec_add(&model.values[lay.embed_w[t]..lay.embed_w[t] + d * x.len()], x, hv);
        }
    }
    check_finite(&h, "embedding")?;
    Ok(h)
}

/// Full forward pass with everything the backward pass needs.
pub(super) struct Trace {
    /// hidden states before each layer and after the last: `layers + 1`
    pub hs: Vec<Vec<f64>>,
    pub caches: Vec<LayerCache>,
    /// dense indices of readout nodes
    pub readout: Vec<usize>,
    /// readout rows × output dim
    pub preds: Vec<f64>,
}

pub(super) fn forward_trace(model: &ModelParams, g: &GraphView<'_>) -> Result<Trace, HgtError> {
    let cfg = &model.config;
    let d = cfg.hidden;
    let mut hs = vec![embed_view(model, g)?];
    let mut caches = Vec::with_capacity(cfg.layers);
    for slots in &model.layout.layers {
        let (out, cache) = layer_forward_cached(&model.values, slots, d, cfg.heads, g, hs.last().unwrap());
        check_finite(&out, "hidden state")?;
        hs.push(out);
        caches.push(cache);
    }
    let rk = model.readout_kind.0 as usize;
    let readout: Vec<usize> = (0..g.node_count()).filter(|&v| g.kind[v] == rk).collect();
    let od = cfg.output_dim;
    let lay = &model.layout;
    let w = &model.values[lay.readout_w..lay.readout_w + od * d];
    let b = &model.values[lay.readout_b..lay.readout_b + od];
    let last = hs.last().unwrap();
    let mut preds = vec![0.0; readout.len() * od];
    for (r, &v) in readout.iter().enumerate() {
        let pr = &mut preds[r * od..(r + 1) * od];
        pr.copy_from_slice(b);
        matvec_add(w, &last[v * d..(v + 1) * d], pr);
    }
    check_finite(&preds, "prediction")?;
    Ok(Trace { hs, caches, readout, preds })
}

/// Predictions for every node of the readout type.
pub fn model_forward(model: &ModelParams, g: &GraphSnapshot) -> Result<BTreeMap<NodeRef, Vec<f64>>, HgtError> {
    check_schema(model, g)?;
    let view = GraphView::new(g);
    let tr = forward_trace(model, &view)?;
    let od = model.config.output_dim;
    Ok(tr
        .readout
        .iter()
        .enumerate()
        .map(|(r, &v)| (view.refs[v], tr.preds[r * od..(r + 1) * od].to_vec()))
        .collect())
}

/// Input embeddings, row-major `node_count × hidden` in node insertion order.
pub fn embed(model: &ModelParams, g: &GraphSnapshot) -> Result<Vec<f64>, HgtError> {
    check_schema(model, g)?;
    embed_view(model, &GraphView::new(g))
}

/// Borrowed view of one layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct HgtLayerParams<'a> {
    model: &'a ModelParams,
    layer: usize,
}

impl ModelParams {
    pub fn layer(&self, layer: usize) -> Option<HgtLayerParams<'_>> {
        (layer < self.config.layers).then_some(HgtLayerParams { model: self, layer })
    }
}

impl HgtLayerParams<'_> {
    pub fn index(&self) -> usize {
        self.layer
    }

    /// One layer update. `h_prev` and the result are row-major
    /// `node_count × hidden` in node insertion order.
    pub fn forward(&self, g: &GraphSnapshot, h_prev: &[f64]) -> Result<Vec<f64>, HgtError> {
        Ok(self.run(g, h_prev)?.0)
    }

    fn run<'g>(&self, g: &'g GraphSnapshot, h_prev: &[f64]) -> Result<(Vec<f64>, LayerCache, GraphView<'g>), HgtError> {
        let m = self.model;
        check_schema(m, g)?;
        let d = m.config.hidden;
        if h_prev.len() != g.node_count() * d {
            return Err(HgtError::ShapeMismatch {
                what: "layer input",
                expected: g.node_count() * d,
                got: h_prev.len(),
            });
        }
        check_finite(h_prev, "layer input")?;
        let view = GraphView::new(g);
        let (out, cache) =
            layer_forward_cached(&m.values, &m.layout.layers[self.layer], d, m.config.heads, &view, h_prev);
        check_finite(&out, "hidden state")?;
        Ok((out, cache, view))
    }
}

/// Attention weights of one layer: for each node with in-edges, one vector
/// per head over its in-neighbours in insertion order.
pub fn attention_weights(
    model: &ModelParams,
    layer: usize,
    g: &GraphSnapshot,
    h_prev: &[f64],
) -> Result<BTreeMap<NodeRef, Vec<Vec<f64>>>, HgtError> {
    let lp = model
        .layer(layer)
        .ok_or_else(|| HgtError::Config(alloc::format!("model has no layer {layer}")))?;
    let (_, cache, view) = lp.run(g, h_prev)?;
    let heads = model.config.heads;
    let mut out = BTreeMap::new();
    for v in 0..view.node_count() {
        let (lo, hi) = (view.in_start[v], view.in_start[v + 1]);
        if lo == hi {
            continue;
        }
        let per_head = (0..heads)
            .map(|i| (lo..hi).map(|e| cache.alpha[e * heads + i]).collect())
            .collect();
        out.insert(view.refs[v], per_head);
    }
    Ok(out)
}
