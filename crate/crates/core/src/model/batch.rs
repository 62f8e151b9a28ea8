//! Mini-batch subgraphs: labeled seeds plus their multi-hop neighborhood.
//!
//! Relation matrices in a batch are restrictions of the globally
//! normalized adjacencies, so a seed whose receptive field fits inside the
//! expansion gets exactly the same output as in a full-graph pass.

use crate::error::{Error, Result};
use crate::layers::AttentionGraph;

use super::forward::PreparedGraph;

#[derive(Debug, Clone)]
pub struct BatchSubgraph {
    /// Seed nodes, global indices, in batch order.
    pub seeds: Vec<usize>,
    /// Local index of each seed.
    pub seed_local: Vec<usize>,
    /// Every included node, global indices, ascending. Position = local index.
    pub included: Vec<usize>,
    pub seed_labels: Vec<bool>,
    /// Local graph: restricted features, labels and adjacencies.
    pub graph: PreparedGraph,
}

impl BatchSubgraph {
    /// Local index of a global node, if included.
    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.included.binary_search(&global).ok()
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn seed_label_values(&self) -> Vec<f64> {
        self.seed_labels.iter().map(|&y| f64::from(u8::from(y))).collect()
    }
}

/// Nodes within `hops` steps of `seeds` over the merged relation graph.
/// With `max_neighbors`, each expanded node contributes at most that many
/// neighbors, heaviest edges first.
pub fn expand(
    graph: &PreparedGraph,
    seeds: &[usize],
    hops: usize,
    max_neighbors: Option<usize>,
) -> Vec<usize> {
    let n = graph.n();
    let mut seen = vec![false; n];
    let mut frontier = Vec::new();
    for &s in seeds {
        if !seen[s] {
            seen[s] = true;
            frontier.push(s);
        }
    }
    let csr = graph.merged.csr();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &u in &frontier {
            let mut nbrs: Vec<(usize, f64)> = csr.row(u).collect();
            if let Some(k) = max_neighbors {
                if nbrs.len() > k {
                    nbrs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    nbrs.truncate(k);
                }
            }
            for (v, _) in nbrs {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    (0..n).filter(|&i| seen[i]).collect()
}

/// Builds the batch for `seeds`, which must be labeled nodes of `graph`.
pub fn sample_batch(
    graph: &PreparedGraph,
    seeds: &[usize],
    hops: usize,
    max_neighbors: Option<usize>,
) -> Result<BatchSubgraph> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed set"));
    }
    if hops == 0 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    let mut seed_labels = Vec::with_capacity(seeds.len());
    for &s in seeds {
        match graph.labels.get(s) {
            Some(Some(y)) => seed_labels.push(*y),
            Some(None) => return Err(Error::Graph(format!("seed {s} is unlabeled"))),
            None => return Err(Error::Graph(format!("seed {s} is out of range"))),
        }
    }
    let included = expand(graph, seeds, hops, max_neighbors);
    if included.len() == graph.n() {
        // The neighborhood is the whole graph; nothing to restrict.
        return Ok(BatchSubgraph {
            seeds: seeds.to_vec(),
            seed_local: seeds.to_vec(),
            included,
            seed_labels,
            graph: graph.clone(),
        });
    }
    let mut local_of = vec![usize::MAX; graph.n()];
    for (li, &g) in included.iter().enumerate() {
        local_of[g] = li;
    }
    let local = |g: usize| Some(local_of[g]).filter(|&l| l != usize::MAX);
    let normalized = graph
        .normalized
        .iter()
        .map(|a| a.restricted(&included, &local))
        .collect();
    let merged = crate::graph::SparseAdjacency::new(graph.merged.csr().induced(&included, &local))
        .expect("restriction of a symmetric adjacency is symmetric");
    let sub = PreparedGraph {
        features: graph.features.select_rows(&included),
        labels: included.iter().map(|&g| graph.labels[g]).collect(),
        normalized,
        attention: AttentionGraph::new(&merged),
        merged,
    };
    Ok(BatchSubgraph {
        seeds: seeds.to_vec(),
        seed_local: seeds.iter().map(|&s| local_of[s]).collect(),
        included,
        seed_labels,
        graph: sub,
    })
}
