//! Reverse-mode gradients of the forward pass, written out by hand.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{dot, matvec_t_add, outer_add, LayerCache, Trace};
use super::params::LayerSlots;
use super::view::GraphView;
use super::ModelParams;
use crate::math::{gelu, gelu_grad, sqrt};

/// Accumulates parameter gradients for one layer into `grad` and returns
/// the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    p: &[f64],
    grad: &mut [f64],
    slots: &LayerSlots,
    d: usize,
    heads: usize,
    g: &GraphView<'_>,
    h: &[f64],
    c: &LayerCache,
    d_out: &[f64],
) -> Vec<f64> {
    let n = g.node_count();
    let m = g.edge_count();
    let dk = d / heads;
    let scale = 1.0 / sqrt(dk as f64);
    let dd = d * d;

    // residual path
    let mut dh = d_out.to_vec();
    let mut dq = vec![0.0; n * d];
    let mut dk_e = vec![0.0; m * d];
    let mut dval = vec![0.0; m * d];
    let mut z = vec![0.0; d];
    let mut dht = vec![0.0; d];
    let mut dalpha = vec![0.0; 0];

    for v in 0..n {
        let ns = &slots.node[g.kind[v]];
        let go = &d_out[v * d..(v + 1) * d];
        let ht = &c.ht[v * d..(v + 1) * d];
        for j in 0..d {
            z[j] = gelu(ht[j]);
        }
        outer_add(&mut grad[ns.a..ns.a + dd], go, &z);
        for (gb, x) in grad[ns.a_bias..ns.a_bias + d].iter_mut().zip(go) {
            *gb += x;
        }
        let (lo, hi) = (g.in_start[v], g.in_start[v + 1]);
        if lo == hi {
            continue;
        }
        dht.iter_mut().for_each(|x| *x = 0.0);
        matvec_t_add(&p[ns.a..ns.a + dd], go, &mut dht);
        for j in 0..d {
            dht[j] *= gelu_grad(ht[j]);
        }
        dalpha.clear();
        dalpha.resize(hi - lo, 0.0);
        for i in 0..heads {
            let dhi = &dht[i * dk..(i + 1) * dk];
            let mut acc = 0.0;
            for e in lo..hi {
                let hd = e * d + i * dk;
                let da = dot(dhi, &c.msg[hd..hd + dk]);
                dalpha[e - lo] = da;
                acc += c.alpha[e * heads + i] * da;
            }
            for e in lo..hi {
                let es = &slots.edge[g.edge_kind[e]];
                let a = c.alpha[e * heads + i];
                let hd = e * d + i * dk;
                let blk = i * dk * dk;
                // message: msg = W_msgᵀ val
                let dmsg: Vec<f64> = dhi.iter().map(|x| a * x).collect();
                outer_add(&mut grad[es.msg + blk..es.msg + blk + dk * dk], &c.val[hd..hd + dk], &dmsg);
                super::forward::matvec_add(&p[es.msg + blk..es.msg + blk + dk * dk], &dmsg, &mut dval[hd..hd + dk]);
                // attention: score = raw · mu · scale, raw = k · (W_att q)
                let dscore = a * (dalpha[e - lo] - acc);
                let mu = p[es.mu];
                let raw = c.raw[e * heads + i];
                grad[es.mu] += dscore * raw * scale;
                let draw = dscore * mu * scale;
                if draw == 0.0 {
                    continue;
                }
                for j in 0..dk {
                    dk_e[hd + j] += draw * c.wq[hd + j];
                }
                let dwq: Vec<f64> = c.k[hd..hd + dk].iter().map(|x| draw * x).collect();
                let qv = &c.q[v * d + i * dk..v * d + (i + 1) * dk];
                outer_add(&mut grad[es.att + blk..es.att + blk + dk * dk], &dwq, qv);
                matvec_t_add(&p[es.att + blk..es.att + blk + dk * dk], &dwq, &mut dq[v * d + i * dk..v * d + (i + 1) * dk]);
            }
        }
    }

    for v in 0..n {
        let ns = &slots.node[g.kind[v]];
        let gq = &dq[v * d..(v + 1) * d];
        outer_add(&mut grad[ns.q..ns.q + dd], gq, &h[v * d..(v + 1) * d]);
        matvec_t_add(&p[ns.q..ns.q + dd], gq, &mut dh[v * d..(v + 1) * d]);
    }

    let mut ds = vec![0.0; d];
    for e in 0..m {
        let u = g.src[e];
        let ns = &slots.node[g.kind[u]];
        let es = &slots.edge[g.edge_kind[e]];
        let se = &c.s[e * d..(e + 1) * d];
        let gk = &dk_e[e * d..(e + 1) * d];
        let gv = &dval[e * d..(e + 1) * d];
        outer_add(&mut grad[ns.k..ns.k + dd], gk, se);
        outer_add(&mut grad[ns.v..ns.v + dd], gv, se);
        ds.iter_mut().for_each(|x| *x = 0.0);
        matvec_t_add(&p[ns.k..ns.k + dd], gk, &mut ds);
        matvec_t_add(&p[ns.v..ns.v + dd], gv, &mut ds);
        let f = g.edge_feat[e];
        if !f.is_empty() {
            outer_add(&mut grad[es.feat..es.feat + d * f.len()], &ds, f);
        }
        for (x, y) in dh[u * d..(u + 1) * d].iter_mut().zip(&ds) {
            *x += y;
        }
    }
    dh
}

/// Adds `∂L/∂θ` to `grad` given `∂L/∂pred` (readout rows × output dim).
pub(super) fn model_backward(model: &ModelParams, g: &GraphView<'_>, tr: &Trace, d_pred: &[f64], grad: &mut [f64]) {
    let cfg = &model.config;
    let d = cfg.hidden;
    let od = cfg.output_dim;
    let lay = &model.layout;
    let p = &model.values;
    let n = g.node_count();

    let last = tr.hs.last().unwrap();
    let mut dh = vec![0.0; n * d];
    for (r, &v) in tr.readout.iter().enumerate() {
        let gp = &d_pred[r * od..(r + 1) * od];
        outer_add(&mut grad[lay.readout_w..lay.readout_w + od * d], gp, &last[v * d..(v + 1) * d]);
        for (gb, x) in grad[lay.readout_b..lay.readout_b + od].iter_mut().zip(gp) {
            *gb += x;
        }
        matvec_t_add(&p[lay.readout_w..lay.readout_w + od * d], gp, &mut dh[v * d..(v + 1) * d]);
    }

    for l in (0..cfg.layers).rev() {
        dh = layer_backward(p, grad, &lay.layers[l], d, cfg.heads, g, &tr.hs[l], &tr.caches[l], &dh);
    }

    for v in 0..n {
        let t = g.kind[v];
        let gv = &dh[v * d..(v + 1) * d];
        for (gb, x) in grad[lay.embed_b[t]..lay.embed_b[t] + d].iter_mut().zip(gv) {
            *gb += x;
        }
        let x = g.feat[v];
        if !x.is_empty() {
            outer_add(&mut grad[lay.embed_w[t]..lay.embed_w[t] + d * x.len()], gv, x);
        }
    }
}
