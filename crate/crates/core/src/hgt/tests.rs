use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{EdgeType, GraphSnapshot, NodeRef, NodeType, Schema};

fn schema() -> Arc<Schema> {
    let nt = |n: &str, d| NodeType { name: n.to_string(), feature_dim: d };
    let et = |n: &str, s: &str, t: &str, d| EdgeType {
        name: n.to_string(),
        src_kind: s.to_string(),
        dst_kind: t.to_string(),
        feature_dim: d,
    };
    Arc::new(
        Schema::new(
            vec![nt("car", 3), nt("lane", 2)],
            vec![et("follows", "car", "car", 2), et("on_lane", "car", "lane", 0), et("carries", "lane", "car", 1)],
        )
        .unwrap(),
    )
}

fn config(hidden: usize, heads: usize, layers: usize) -> ModelConfig {
    ModelConfig { hidden, heads, layers, seed: 3, ..ModelConfig::default() }
}

/// Cars 0..cars with random features on one lane, follows chains plus a
/// few random extra edges.
fn random_graph(s: &Arc<Schema>, cars: usize, seed: u64) -> GraphSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = GraphSnapshot::new(Arc::clone(s), 0);
    let lane = g.add_node("lane", &[rng.gen_range(-1.0..1.0), 0.5]).unwrap();
    let ids: Vec<NodeRef> = (0..cars)
        .map(|_| {
            let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            g.add_node("car", &f).unwrap()
        })
        .collect();
    for (i, c) in ids.iter().enumerate() {
        g.add_edge(*c, lane, "on_lane", &[]).unwrap();
        g.add_edge(lane, *c, "carries", &[rng.gen_range(0.0..1.0)]).unwrap();
        if i + 1 < ids.len() {
            g.add_edge(*c, ids[i + 1], "follows", &[rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5)]).unwrap();
        }
    }
    if cars >= 3 {
        g.add_edge(ids[cars - 1], ids[0], "follows", &[0.3, 0.1]).unwrap();
    }
    g.seal()
}

fn batch_for(g: GraphSnapshot, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let car = g.schema().node_kind("car").unwrap();
    let targets = g.nodes().filter(|n| n.kind == car).map(|n| (n.id, vec![rng.gen_range(0.0..1.0)])).collect();
    Batch { graph: Arc::new(g), targets, mask: BTreeSet::new() }
}

#[test]
fn config_invariants() {
    let s = schema();
    assert!(matches!(ModelParams::new(config(8, 2, 0), Arc::clone(&s)), Err(HgtError::Config(_))));
    assert!(matches!(ModelParams::new(config(9, 2, 1), Arc::clone(&s)), Err(HgtError::Config(_))));
    assert!(matches!(ModelParams::new(config(8, 0, 1), Arc::clone(&s)), Err(HgtError::Config(_))));
    let bad = ModelConfig { readout_type: "bus".into(), ..config(8, 2, 1) };
    assert!(matches!(ModelParams::new(bad, s), Err(HgtError::Config(_))));
}

#[test]
fn init_ranges() {
    let m = ModelParams::new(config(16, 2, 2), schema()).unwrap();
    let bound = 0.25;
    for t in m.tensors() {
        let vals = m.tensor(&t.name).unwrap();
        if t.name.ends_with("bias") {
            assert!(vals.iter().all(|x| *x == 0.0), "{}", t.name);
        } else if t.name.ends_with(".mu") {
            assert_eq!(vals, &[1.0]);
        } else {
            assert!(vals.iter().all(|x| x.abs() < bound), "{}", t.name);
        }
    }
    let att = m.tensors().iter().find(|t| t.name == "layer0.follows.att").unwrap();
    assert_eq!(att.shape, vec![2, 8, 8]);
}

#[test]
fn singleton_neighbourhood_gets_full_attention() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    let mut g = GraphSnapshot::new(s, 0);
    let a = g.add_node("car", &[0.1, 0.2, 0.3]).unwrap();
    let b = g.add_node("car", &[0.4, -0.2, 0.0]).unwrap();
    g.add_edge(a, b, "follows", &[0.2, 0.0]).unwrap();
    let g = g.seal();
    let h = embed(&m, &g).unwrap();
    let att = attention_weights(&m, 0, &g, &h).unwrap();
    assert_eq!(att.len(), 1);
    assert_eq!(att[&b], vec![vec![1.0], vec![1.0]]);
}

#[test]
fn symmetric_neighbours_split_attention() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    let mut g = GraphSnapshot::new(s, 0);
    let t = g.add_node("car", &[0.1, 0.2, 0.3]).unwrap();
    let u1 = g.add_node("car", &[0.5, 0.5, 0.5]).unwrap();
    let u2 = g.add_node("car", &[0.5, 0.5, 0.5]).unwrap();
    g.add_edge(u1, t, "follows", &[0.2, 0.1]).unwrap();
    g.add_edge(u2, t, "follows", &[0.2, 0.1]).unwrap();
    let g = g.seal();
    let h = embed(&m, &g).unwrap();
    let att = attention_weights(&m, 0, &g, &h).unwrap();
    for head in &att[&t] {
        assert!((head[0] - 0.5).abs() < 1e-15 && (head[1] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn attention_sums_to_one() {
    let s = schema();
    let m = ModelParams::new(config(16, 4, 2), Arc::clone(&s)).unwrap();
    for seed in 0..5 {
        let g = random_graph(&s, 3 + seed as usize, seed);
        let h = embed(&m, &g).unwrap();
        for l in 0..2 {
            let h_l = if l == 0 { h.clone() } else { m.layer(0).unwrap().forward(&g, &h).unwrap() };
            for heads in attention_weights(&m, l, &g, &h_l).unwrap().values() {
                for w in heads {
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_output_projection_is_identity() {
    let s = schema();
    let mut m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    for ty in ["car", "lane"] {
        m.tensor_mut(&alloc::format!("layer0.{ty}.a")).unwrap().iter_mut().for_each(|x| *x = 0.0);
    }
    let g = random_graph(&s, 4, 9);
    let h = embed(&m, &g).unwrap();
    assert_eq!(m.layer(0).unwrap().forward(&g, &h).unwrap(), h);
}

#[test]
fn layer_input_shape_checked() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    let g = random_graph(&s, 3, 1);
    let err = m.layer(0).unwrap().forward(&g, &[0.0; 5]).unwrap_err();
    assert!(matches!(err, HgtError::ShapeMismatch { .. }));
    let mut h = embed(&m, &g).unwrap();
    h[0] = f64::NAN;
    assert_eq!(m.layer(0).unwrap().forward(&g, &h).unwrap_err(), HgtError::NonFinite("layer input"));
}

#[test]
fn no_readout_nodes_gives_empty_map() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 2), Arc::clone(&s)).unwrap();
    let mut g = GraphSnapshot::new(s, 0);
    g.add_node("lane", &[0.0, 1.0]).unwrap();
    assert!(model_forward(&m, &g.seal()).unwrap().is_empty());
}

#[test]
fn foreign_schema_rejected() {
    let m = ModelParams::new(config(8, 2, 1), schema()).unwrap();
    let other = Arc::new(Schema::new(vec![NodeType { name: "car".into(), feature_dim: 3 }], vec![]).unwrap());
    let g = GraphSnapshot::new(other, 0).seal();
    assert_eq!(model_forward(&m, &g).unwrap_err(), HgtError::SchemaMismatch);
}

#[test]
fn forward_is_equivariant_under_insertion_order() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 2), Arc::clone(&s)).unwrap();
    let feats = [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.9], [0.7, -0.7, 0.2]];
    let build = |order: &[usize]| {
        let mut g = GraphSnapshot::new(Arc::clone(&s), 0);
        let lane = g.add_node("lane", &[0.3, 0.4]).unwrap();
        let mut ids = [NodeRef(0); 3];
        for &i in order {
            ids[i] = g.add_node("car", &feats[i]).unwrap();
        }
        for &i in order {
            g.add_edge(lane, ids[i], "carries", &[0.1 * i as f64]).unwrap();
        }
        for &(a, b) in &[(0usize, 1usize), (1, 2), (2, 0)] {
            g.add_edge(ids[a], ids[b], "follows", &[0.5, 0.1]).unwrap();
        }
        let p = model_forward(&m, &g.seal()).unwrap();
        (0..3).map(|i| p[&ids[i]][0]).collect::<Vec<f64>>()
    };
    let a = build(&[0, 1, 2]);
    let b = build(&[2, 0, 1]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn mse_examples() {
    let s = schema();
    let mut g = GraphSnapshot::new(s, 0);
    let a = g.add_node("car", &[0.0; 3]).unwrap();
    let b = g.add_node("car", &[0.0; 3]).unwrap();
    let batch = Batch {
        graph: Arc::new(g.seal()),
        targets: [(a, vec![0.0, 0.0]), (b, vec![1.0, 1.0])].into_iter().collect(),
        mask: BTreeSet::new(),
    };
    let mut pred: BTreeMap<NodeRef, Vec<f64>> = batch.targets.clone();
    assert_eq!(mse_loss(&pred, &batch).unwrap(), 0.0);
    pred.insert(a, vec![1.0, 2.0]);
    pred.insert(b, vec![2.0, 3.0]);
    // (1 + 4 + 1 + 4) / 4
    assert_eq!(mse_loss(&pred, &batch).unwrap(), 2.5);
    let mut masked = batch.clone();
    masked.mask.insert(b);
    assert_eq!(mse_loss(&pred, &masked).unwrap(), 2.5);
    masked.mask.insert(a);
    assert_eq!(mse_loss(&pred, &masked).unwrap_err(), HgtError::EmptyTargets);
    pred.remove(&a);
    assert_eq!(mse_loss(&pred, &batch).unwrap_err(), HgtError::MissingPrediction(a));
}

#[test]
fn gradients_match_finite_differences() {
    let s = schema();
    for (hidden, heads, layers, seed) in [(8, 2, 2, 1u64), (4, 1, 1, 2), (16, 4, 3, 3), (32, 2, 2, 4)] {
        let mut cfg = config(hidden, heads, layers);
        cfg.seed = seed;
        let m = ModelParams::new(cfg, Arc::clone(&s)).unwrap();
        let batch = batch_for(random_graph(&s, 4, seed), seed);
        let err = grad_check(&m, &batch, 60).unwrap();
        assert!(err < 1e-4, "d={hidden} h={heads} L={layers}: {err}");
    }
}

#[test]
fn gradient_is_linear_in_loss_scale() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 2), Arc::clone(&s)).unwrap();
    let batch = batch_for(random_graph(&s, 5, 1), 1);
    let (l1, g1) = loss_and_grad(&m, &batch, 1.0).unwrap();
    let (l2, g2) = loss_and_grad(&m, &batch, 2.0).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn readout_bias_gradient_vanishes_at_exact_zero_fit() {
    let s = schema();
    let mut m = ModelParams::new(config(8, 2, 2), Arc::clone(&s)).unwrap();
    m.tensor_mut("readout.weight").unwrap().iter_mut().for_each(|x| *x = 0.0);
    let mut batch = batch_for(random_graph(&s, 4, 2), 2);
    batch.targets.values_mut().for_each(|t| t[0] = 0.0);
    let (loss, grad) = loss_and_grad(&m, &batch, 1.0).unwrap();
    assert_eq!(loss, 0.0);
    let b = m.tensors().iter().find(|t| t.name == "readout.bias").unwrap();
    assert_eq!(grad[b.offset], 0.0);
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let s = schema();
    let data = vec![batch_for(random_graph(&s, 4, 5), 5)];
    let cfg = ModelConfig { learning_rate: 0.0, epochs: 5, ..config(8, 2, 2) };
    let out = train(&data, cfg.clone()).unwrap();
    assert_eq!(out.params, ModelParams::new(cfg, s).unwrap());
    assert_eq!(out.losses.len(), 5);
}

#[test]
fn training_descends_and_is_deterministic() {
    let s = schema();
    let data = vec![batch_for(random_graph(&s, 5, 6), 6)];
    let cfg = ModelConfig { learning_rate: 1e-2, epochs: 50, ..config(8, 2, 2) };
    let a = train(&data, cfg.clone()).unwrap();
    let b = train(&data, cfg).unwrap();
    assert_eq!(a.losses.len(), 50);
    assert!(a.losses[49] < a.losses[0]);
    assert_eq!(a, b);
}

#[test]
fn empty_dataset_rejected() {
    assert_eq!(train(&[], config(8, 2, 1)).unwrap_err(), HgtError::EmptyDataset);
    let s = schema();
    let mut b = batch_for(random_graph(&s, 2, 1), 1);
    b.targets.clear();
    assert_eq!(train(&[b], config(8, 2, 1)).unwrap_err(), HgtError::EmptyDataset);
}

#[test]
fn divergence_is_reported() {
    let s = schema();
    let mut m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    m.values_mut()[0] = f64::INFINITY;
    let batch = batch_for(random_graph(&s, 3, 1), 1);
    assert!(matches!(loss_and_grad(&m, &batch, 1.0), Err(HgtError::NonFinite(_))));
}

#[test]
fn targets_must_be_readout_nodes() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 1), Arc::clone(&s)).unwrap();
    let g = random_graph(&s, 2, 1);
    let lane = g.nodes().next().unwrap().id;
    let batch = Batch { graph: Arc::new(g), targets: [(lane, vec![0.0])].into_iter().collect(), mask: BTreeSet::new() };
    assert_eq!(loss_and_grad(&m, &batch, 1.0).unwrap_err(), HgtError::InvalidTarget(lane));
}

#[test]
fn tensor_round_trip() {
    let s = schema();
    let m = ModelParams::new(config(8, 2, 2), Arc::clone(&s)).unwrap();
    let named: BTreeMap<_, _> = m.tensors().iter().map(|t| (t.name.clone(), m.tensor(&t.name).unwrap().to_vec())).collect();
    assert_eq!(ModelParams::from_tensors(m.config.clone(), Arc::clone(&s), &named).unwrap(), m);
    let mut missing = named.clone();
    missing.remove("readout.bias");
    assert!(matches!(ModelParams::from_tensors(m.config.clone(), s, &missing), Err(HgtError::UnknownTensor(_))));
}

