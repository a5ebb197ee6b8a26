//! Dense evaluation of the HGT layer equations straight from the named
//! tensors, and random heterogeneous graphs to run it on.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgsim_core::graph::{EdgeType, NodeType};
use tgsim_core::hgt::{attention_weights, embed, model_forward};
use tgsim_core::{GraphError, GraphSnapshot, ModelConfig, ModelParams, NodeRef, Schema};

type Mat = Vec<Vec<f64>>;

pub fn schema() -> Arc<Schema> {
    let nt = |n: &str, d| NodeType { name: n.into(), feature_dim: d };
    let et = |n: &str, s: &str, t: &str, d| EdgeType { name: n.into(), src_kind: s.into(), dst_kind: t.into(), feature_dim: d };
    Arc::new(
        Schema::new(
            vec![nt("car", 4), nt("lane", 2), nt("signal", 0)],
            vec![
                et("follows", "car", "car", 2),
                et("on_lane", "car", "lane", 2),
                et("carries", "lane", "car", 1),
                et("controls", "signal", "lane", 0),
                et("connects", "lane", "lane", 3),
            ],
        )
        .unwrap(),
    )
}

/// Random graph with 3..=10 live nodes, some tombstoned ids and a random
/// mix of typed edges.
pub fn random_graph(s: &Arc<Schema>, seed: u64) -> GraphSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = GraphSnapshot::new(Arc::clone(s), seed);
    let n = rng.gen_range(3..=10);
    let kinds = ["car", "car", "lane", "signal"];
    let mut ids = Vec::new();
    let mut guaranteed = vec!["car", "lane"];
    for i in 0..n + 2 {
        let kind = guaranteed.pop().unwrap_or(kinds[rng.gen_range(0..kinds.len())]);
        let dim = s.node_type(s.node_kind(kind).unwrap()).feature_dim;
        let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let id = g.add_node(kind, &f).unwrap();
        // two throwaway nodes leave holes in the id space
        if i == 2 || i == 5 {
            g.remove_node(id).unwrap();
        } else {
            ids.push((id, kind));
        }
    }
    let edge_types: Vec<(String, String, String, usize)> =
        s.edge_types().iter().map(|e| (e.name.clone(), e.src_kind.clone(), e.dst_kind.clone(), e.feature_dim)).collect();
    for _ in 0..rng.gen_range(n..3 * n) {
        let (a, ka) = ids[rng.gen_range(0..ids.len())];
        let (b, kb) = ids[rng.gen_range(0..ids.len())];
        let fits: Vec<_> = edge_types.iter().filter(|e| e.1 == ka && e.2 == kb).collect();
        if fits.is_empty() {
            continue;
        }
        let e = fits[rng.gen_range(0..fits.len())];
        let f: Vec<f64> = (0..e.3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match g.add_edge(a, b, &e.0, &f) {
            Ok(_) | Err(GraphError::SelfLoop(_)) | Err(GraphError::ParallelEdge { .. }) => {}
            Err(err) => panic!("{err}"),
        }
    }
    g.seal()
}

pub fn randomize(m: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in m.values_mut() {
        *x = rng.gen_range(-0.6..0.6);
    }
}

fn mat(m: &ModelParams, name: &str, rows: usize, cols: usize) -> Mat {
    let v = m.tensor(name).unwrap();
    assert_eq!(v.len(), rows * cols, "{name}");
    (0..rows).map(|r| v[r * cols..(r + 1) * cols].to_vec()).collect()
}

fn apply(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn transpose(w: &Mat) -> Mat {
    (0..w[0].len()).map(|c| w.iter().map(|r| r[c]).collect()).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

struct Reference<'a> {
    m: &'a ModelParams,
    g: &'a GraphSnapshot,
    d: usize,
    heads: usize,
}

impl Reference<'_> {
    fn kind_name(&self, v: NodeRef) -> String {
        let s = self.g.schema();
        s.node_type(self.g.node_kind(v).unwrap()).name.clone()
    }

    fn embed(&self) -> BTreeMap<NodeRef, Vec<f64>> {
        let s = self.g.schema();
        self.g
            .nodes()
            .map(|n| {
                let t = &s.node_type(n.kind).name;
                let f = n.features.len();
                let mut h = if f == 0 { vec![0.0; self.d] } else { apply(&mat(self.m, &format!("embed.{t}.weight"), self.d, f), n.features) };
                for (x, b) in h.iter_mut().zip(self.m.tensor(&format!("embed.{t}.bias")).unwrap()) {
                    *x += b;
                }
                (n.id, h)
            })
            .collect()
    }

    /// Attention per head over the in-edges of `v`, plus the layer output.
    fn layer(&self, l: usize, h: &BTreeMap<NodeRef, Vec<f64>>) -> (BTreeMap<NodeRef, Vec<f64>>, BTreeMap<NodeRef, Mat>) {
        let (d, heads) = (self.d, self.heads);
        let dk = d / heads;
        let s = self.g.schema();
        let mut out = BTreeMap::new();
        let mut att = BTreeMap::new();
        for (&v, hv) in h {
            let tv = self.kind_name(v);
            let q = apply(&mat(self.m, &format!("layer{l}.{tv}.q"), d, d), hv);
            // in-edges in insertion order
            let mut edges: Vec<_> = self.g.edges().filter(|e| e.dst == v).collect();
            edges.sort_by_key(|e| e.id);
            let mut scores: Mat = vec![Vec::new(); heads];
            let mut msgs: Vec<Mat> = vec![Vec::new(); heads];
            for e in &edges {
                let et = &s.edge_type(e.kind).name;
                let tu = self.kind_name(e.src);
                let mut se = h[&e.src].clone();
                if !e.features.is_empty() {
                    let proj = apply(&mat(self.m, &format!("layer{l}.{et}.edge"), d, e.features.len()), e.features);
                    se.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);
                }
                let k = apply(&mat(self.m, &format!("layer{l}.{tu}.k"), d, d), &se);
                let val = apply(&mat(self.m, &format!("layer{l}.{tu}.v"), d, d), &se);
                let mu = self.m.tensor(&format!("layer{l}.{et}.mu")).unwrap()[0];
                let att_w = self.m.tensor(&format!("layer{l}.{et}.att")).unwrap();
                let msg_w = self.m.tensor(&format!("layer{l}.{et}.msg")).unwrap();
                for i in 0..heads {
                    let block = |w: &[f64]| -> Mat {
                        (0..dk).map(|r| w[i * dk * dk + r * dk..i * dk * dk + (r + 1) * dk].to_vec()).collect()
                    };
                    let wq = apply(&block(att_w), &q[i * dk..(i + 1) * dk]);
                    let dotp: f64 = k[i * dk..(i + 1) * dk].iter().zip(&wq).map(|(a, b)| a * b).sum();
                    scores[i].push(dotp * mu / (dk as f64).sqrt());
                    msgs[i].push(apply(&transpose(&block(msg_w)), &val[i * dk..(i + 1) * dk]));
                }
            }
            let mut ht = vec![0.0; d];
            let mut alphas = Vec::new();
            for i in 0..heads {
                let z: f64 = scores[i].iter().map(|x| x.exp()).sum();
                let a: Vec<f64> = scores[i].iter().map(|x| x.exp() / z).collect();
                for (ae, me) in a.iter().zip(&msgs[i]) {
                    for j in 0..dk {
                        ht[i * dk + j] += ae * me[j];
                    }
                }
                alphas.push(a);
            }
            if !edges.is_empty() {
                att.insert(v, alphas);
            }
            let act: Vec<f64> = ht.iter().map(|x| gelu(*x)).collect();
            let mut o = apply(&mat(self.m, &format!("layer{l}.{tv}.a"), d, d), &act);
            let bias = self.m.tensor(&format!("layer{l}.{tv}.a_bias")).unwrap();
            for j in 0..d {
                o[j] += bias[j] + hv[j];
            }
            out.insert(v, o);
        }
        (out, att)
    }

    fn predict(&self, h: &BTreeMap<NodeRef, Vec<f64>>) -> BTreeMap<NodeRef, Vec<f64>> {
        let od = self.m.config.output_dim;
        let w = mat(self.m, "readout.weight", od, self.d);
        let b = self.m.tensor("readout.bias").unwrap();
        h.iter()
            .filter(|(v, _)| self.kind_name(**v) == self.m.config.readout_type)
            .map(|(v, x)| (*v, apply(&w, x).iter().zip(b).map(|(a, c)| a + c).collect()))
            .collect()
    }
}

fn flatten(h: &BTreeMap<NodeRef, Vec<f64>>) -> Vec<f64> {
    h.values().flatten().copied().collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute difference between the optimized pass and the dense
/// evaluation over embedding, per-layer attention and output, and readout.
/// Structural mismatches (different attended nodes or readout keys) give
/// infinity.
pub fn reference_deviation(seed: u64, hidden: usize, heads: usize, layers: usize) -> f64 {
    let s = schema();
    let g = random_graph(&s, seed);
    let cfg = ModelConfig { hidden, heads, layers, seed, ..ModelConfig::default() };
    let mut m = ModelParams::new(cfg, Arc::clone(&s)).unwrap();
    randomize(&mut m, seed + 100);
    let r = Reference { m: &m, g: &g, d: hidden, heads };

    let mut want = r.embed();
    let mut got = embed(&m, &g).unwrap();
    let mut worst = max_diff(&got, &flatten(&want));
    for l in 0..layers {
        let (next, att) = r.layer(l, &want);
        let ours = attention_weights(&m, l, &g, &got).unwrap();
        if !ours.keys().eq(att.keys()) {
            return f64::INFINITY;
        }
        for (v, heads_w) in &att {
            for (a, b) in heads_w.iter().zip(&ours[v]) {
                worst = worst.max(max_diff(a, b));
            }
        }
        got = m.layer(l).unwrap().forward(&g, &got).unwrap();
        worst = worst.max(max_diff(&got, &flatten(&next)));
        want = next;
    }
    let preds = model_forward(&m, &g).unwrap();
    let ref_preds = r.predict(&want);
    if !preds.keys().eq(ref_preds.keys()) {
        return f64::INFINITY;
    }
    for (v, p) in &preds {
        worst = worst.max(max_diff(p, &ref_preds[v]));
    }
    worst
}
