#![allow(dead_code)]

use raugnn::autodiff::{SplitMix64, Tensor};
use raugnn::graph::{MultiRelationGraph, Relation, SparseAdjacency};

/// Erdős–Rényi style relation with integer weights in 1..=3.
pub fn random_adjacency(rng: &mut SplitMix64, n: usize, p: f64) -> SparseAdjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                edges.push((i, j, 1.0 + rng.below(3) as f64));
            }
        }
    }
    SparseAdjacency::from_undirected_edges(n, &edges).unwrap()
}

pub fn random_graph(seed: u64, n: usize, n_relations: usize, d: usize, p: f64) -> MultiRelationGraph {
    let mut rng = SplitMix64::new(seed);
    let relations = (0..n_relations)
        .map(|r| Relation {
            name: format!("r{r}"),
            adjacency: random_adjacency(&mut rng, n, p),
        })
        .collect();
    let x = (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let features = Tensor::from_vec(n, d, x).unwrap();
    let labels = (0..n).map(|i| Some(i % 3 == 0)).collect();
    MultiRelationGraph::new(relations, features, labels).unwrap()
}

pub fn random_tensor(rng: &mut SplitMix64, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(rows, cols, v).unwrap()
}

/// Fisher-Yates permutation from a seeded stream.
pub fn random_permutation(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        p.swap(i, j);
    }
    p
}
