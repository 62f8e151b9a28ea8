mod common;

use common::{random_adjacency, random_graph, random_permutation, random_tensor};
use proptest::prelude::*;
use raugnn::autodiff::{SplitMix64, Tape, Tensor};
use raugnn::graph::{
    merge_relations, normalize, Csr, MultiRelationGraph, Relation, SparseAdjacency,
};
use raugnn::layers::{gat_forward, AttentionGraph, GatHead, GatLayerParams, LEAKY_SLOPE};
use raugnn::model::{
    forward, load_checkpoint, predict, sample_batch, save_checkpoint, train, CheckpointMeta,
    ModelConfig, ModelParams, PreparedGraph, Variant,
};
use raugnn::layers::loss;

fn dense_normalized(u: &Tensor) -> Tensor {
    let n = u.rows();
    let mut a = u.clone();
    for i in 0..n {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get(i, j) / (d[i].sqrt() * d[j].sqrt()));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_matches_dense_formula(seed in any::<u64>(), n in 1usize..30, p in 0.0f64..0.5) {
        let mut rng = SplitMix64::new(seed);
        let u = random_adjacency(&mut rng, n, p);
        let a = normalize(&u).unwrap();
        prop_assert!(a.to_dense().max_abs_diff(&dense_normalized(&u.to_dense())) < 1e-12);
    }

    #[test]
    fn merge_is_order_invariant(seed in any::<u64>(), n in 1usize..25, r in 1usize..5) {
        let mut rng = SplitMix64::new(seed);
        let rels: Vec<SparseAdjacency> = (0..r).map(|_| random_adjacency(&mut rng, n, 0.3)).collect();
        let perm = random_permutation(&mut rng, r);
        let a = merge_relations(rels.iter()).unwrap();
        let b = merge_relations(perm.iter().map(|&k| &rels[k])).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sparse_product_matches_dense(seed in any::<u64>(), n in 1usize..25, k in 1usize..6) {
        let mut rng = SplitMix64::new(seed);
        let csr: Csr = random_adjacency(&mut rng, n, 0.3).csr().with_self_loops();
        let h = random_tensor(&mut rng, n, k, -2.0, 2.0);
        let dense = csr.to_dense();
        prop_assert!(csr.matmul_dense(&h).unwrap().max_abs_diff(&dense.matmul(&h).unwrap()) < 1e-12);
        prop_assert!(csr.matmul_dense_t(&h).unwrap().max_abs_diff(&dense.transpose().matmul(&h).unwrap()) < 1e-12);
    }
}

/// Attention computed entry by entry on dense matrices.
fn dense_gat(adj: &Tensor, h: &Tensor, heads: &[(Tensor, Tensor, Tensor)]) -> Tensor {
    let n = adj.rows();
    let mut parts = Vec::new();
    for (t, a_src, a_dst) in heads {
        let th = h.matmul(t).unwrap();
        let k = th.cols();
        let mut out = Tensor::zeros(n, k);
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| j == i || adj.get(i, j) != 0.0).collect();
            let src: f64 = (0..k).map(|c| th.get(i, c) * a_src.get(c, 0)).sum();
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let e = src + (0..k).map(|c| th.get(j, c) * a_dst.get(c, 0)).sum::<f64>();
                    if e > 0.0 { e } else { LEAKY_SLOPE * e }
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for (&j, s) in nbrs.iter().zip(&scores) {
                let alpha = (s - max).exp() / z;
                for c in 0..k {
                    out.set(i, c, out.get(i, c) + alpha * th.get(j, c));
                }
            }
        }
        parts.push(out);
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut cat = Tensor::zeros(n, width);
    for i in 0..n {
        let mut c0 = 0;
        for p in &parts {
            for c in 0..p.cols() {
                cat.set(i, c0 + c, p.get(i, c).max(0.0));
            }
            c0 += p.cols();
        }
    }
    cat
}

#[test]
fn attention_matches_dense_oracle() {
    for seed in 0..10 {
        let mut rng = SplitMix64::new(seed);
        let adj = random_adjacency(&mut rng, 6, 0.4);
        let h = random_tensor(&mut rng, 6, 5, -1.0, 1.0);
        let heads: Vec<(Tensor, Tensor, Tensor)> = (0..3)
            .map(|_| {
                (
                    random_tensor(&mut rng, 5, 4, -1.0, 1.0),
                    random_tensor(&mut rng, 4, 1, -1.0, 1.0),
                    random_tensor(&mut rng, 4, 1, -1.0, 1.0),
                )
            })
            .collect();
        let expected = dense_gat(&adj.to_dense(), &h, &heads);

        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let params = GatLayerParams {
            heads: heads
                .iter()
                .map(|(t, s, d)| GatHead {
                    transform: tape.constant(t.clone()),
                    att_src: tape.constant(s.clone()),
                    att_dst: tape.constant(d.clone()),
                })
                .collect(),
        };
        let out = gat_forward(&mut tape, &AttentionGraph::new(&adj), hv, &params).unwrap();
        let diff = tape.value(out.h).max_abs_diff(&expected);
        assert!(diff < 1e-10, "seed {seed}: {diff:e}");
    }
}

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig { variant, gat_heads: 2, embed_dim: 8, batch_size: 4, ..Default::default() }
}

#[test]
fn permutation_equivariance_all_variants() {
    for seed in 0..5 {
        let g = random_graph(100 + seed, 15, 3, 4, 0.25);
        let mut rng = SplitMix64::new(seed);
        let perm = random_permutation(&mut rng, 15);
        let pg = g.permuted(&perm).unwrap();
        for variant in Variant::ALL {
            let params = ModelParams::init(&small_config(variant), 3, 4).unwrap();
            let a = predict(&PreparedGraph::new(&g).unwrap(), &params, variant).unwrap();
            let b = predict(&PreparedGraph::new(&pg).unwrap(), &params, variant).unwrap();
            for i in 0..15 {
                assert!((a.probs[i] - b.probs[perm[i]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn batches_reproduce_full_graph_outputs() {
    let g = random_graph(21, 120, 2, 3, 0.01);
    let prepared = PreparedGraph::new(&g).unwrap();
    for variant in Variant::ALL {
        let config = small_config(variant);
        let params = ModelParams::init(&config, 2, 3).unwrap();
        let full = predict(&prepared, &params, variant).unwrap();
        for start in (0..120).step_by(13) {
            let seeds: Vec<usize> = (start..(start + 5).min(120)).collect();
            let b = sample_batch(&prepared, &seeds, config.hops(), None).unwrap();
            let local = predict(&b.graph, &params, variant).unwrap();
            for (s, l) in b.seeds.iter().zip(&b.seed_local) {
                assert!((full.probs[*s] - local.probs[*l]).abs() < 1e-10, "{variant} seed {s}");
            }
        }
    }
}

#[test]
fn isolated_unlabeled_nodes_do_not_change_batch_loss() {
    let g = random_graph(31, 20, 2, 3, 0.2);
    let config = small_config(Variant::Full);
    let params = ModelParams::init(&config, 2, 3).unwrap();
    let batch_loss = |g: &MultiRelationGraph| {
        let prepared = PreparedGraph::new(g).unwrap();
        let seeds = [0, 3, 6, 9];
        let b = sample_batch(&prepared, &seeds, config.hops(), None).unwrap();
        let mut tape = Tape::new();
        let vars = params.lift(&mut tape);
        let out = forward(&mut tape, &b.graph, &vars, config.variant).unwrap();
        let p = tape.gather_rows(out.probs, &b.seed_local).unwrap();
        let l = loss(&mut tape, p, &b.seed_label_values(), &[], 0.0).unwrap();
        tape.value(l).get(0, 0)
    };
    let base = batch_loss(&g);

    let n = g.n() + 5;
    let relations = g
        .relations()
        .iter()
        .map(|r| {
            let c = r.adjacency.csr();
            let trip = (0..g.n()).flat_map(|i| c.row(i).map(move |(j, v)| (i, j, v))).collect();
            Relation { name: r.name.clone(), adjacency: SparseAdjacency::from_triplets(n, trip).unwrap() }
        })
        .collect();
    let mut x = g.features().to_rows();
    x.extend((0..5).map(|_| vec![0.3; 3]));
    let mut labels = g.labels().to_vec();
    labels.extend([None; 5]);
    let bigger = MultiRelationGraph::new(relations, Tensor::from_rows(&x).unwrap(), labels).unwrap();
    assert_eq!(batch_loss(&bigger), base);
}

fn labeled_ring(n: usize) -> PreparedGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    let rel = Relation { name: "r".into(), adjacency: SparseAdjacency::from_undirected_edges(n, &edges).unwrap() };
    let mut rng = SplitMix64::new(4);
    let labels: Vec<Option<bool>> = (0..n).map(|i| Some(i % 4 == 0)).collect();
    let x: Vec<f64> = (0..n * 3)
        .map(|k| if labels[k / 3] == Some(true) { 0.8 } else { 0.0 } + rng.uniform(-0.5, 0.5))
        .collect();
    let g = MultiRelationGraph::new(vec![rel], Tensor::from_vec(n, 3, x).unwrap(), labels).unwrap();
    PreparedGraph::new(&g).unwrap()
}

#[test]
fn training_reduces_loss_on_tiny_graph() {
    let g = labeled_ring(12);
    let nodes: Vec<usize> = (0..12).collect();
    let config = ModelConfig { epochs: 100, batch_size: 12, ..small_config(Variant::Full) };
    let out = train(&g, &nodes, &config, None).unwrap();
    // Balanced epochs over 3 positives and 9 negatives hold 18 seeds.
    assert_eq!(out.losses.len(), 200);
    assert!(out.losses[49] < out.losses[0], "{} vs {}", out.losses[49], out.losses[0]);
    assert!(out.losses.iter().all(|l| *l >= 0.0));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let g = labeled_ring(12);
    let nodes: Vec<usize> = (0..12).collect();
    let config = ModelConfig { lr: 0.0, epochs: 3, ..small_config(Variant::Full) };
    let init = ModelParams::init(&config, 1, 3).unwrap();
    let out = train(&g, &nodes, &config, None).unwrap();
    assert_eq!(out.params, init);
}

#[test]
fn training_is_deterministic() {
    let g = labeled_ring(16);
    let nodes: Vec<usize> = (0..16).step_by(2).chain([1, 5]).collect();
    for variant in Variant::ALL {
        let config = ModelConfig { epochs: 4, ..small_config(variant) };
        let a = train(&g, &nodes, &config, None).unwrap();
        let b = train(&g, &nodes, &config, None).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
        let c = train(&g, &nodes, &ModelConfig { seed: 1, ..config }, None).unwrap();
        assert_ne!(a.losses, c.losses);
    }
}

#[test]
fn single_class_split_is_rejected() {
    let g = labeled_ring(12);
    let config = small_config(Variant::Full);
    assert!(train(&g, &[1, 2, 3], &config, None).is_err());
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let g = labeled_ring(12);
    let config = ModelConfig { epochs: 2, ..small_config(Variant::Pr) };
    let nodes: Vec<usize> = (0..12).collect();
    let out = train(&g, &nodes, &config, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        config: config.clone(),
        seed: 0,
        n_relations: 1,
        feature_dim: 3,
        relation_names: vec!["r".into()],
        train_pct: None,
        param_names: out.params.to_named().into_iter().map(|(n, _)| n).collect(),
    };
    save_checkpoint(dir.path(), &meta, &out.params, &out.losses).unwrap();
    let (meta2, params) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(meta2.config, config);
    assert_eq!(params, out.params);
    assert_eq!(
        predict(&g, &params, Variant::Pr).unwrap(),
        predict(&g, &out.params, Variant::Pr).unwrap()
    );
    let trajectory = std::fs::read_to_string(dir.path().join("loss_trajectory.csv")).unwrap();
    assert_eq!(trajectory.lines().count(), 1 + out.losses.len());
}
