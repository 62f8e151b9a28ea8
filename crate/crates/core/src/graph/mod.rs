//! Multi-relation user graphs: construction from incidence logs, sparse
//! storage, normalization and I/O.

mod csr;
mod incidence;
pub mod io;

pub use csr::{merge_relations, normalize, Csr, NormalizedAdjacency, SparseAdjacency};
pub use incidence::{
    build_relation_graph, build_relation_graph_capped, IncidenceMatrix, Projection,
    DEFAULT_ENTITY_DEGREE_CAP,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One named relation type (e.g. follow, comment, post, hashtag).
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub name: String,
    pub adjacency: SparseAdjacency,
}

/// Node features, labels and `R` parallel relation adjacencies over one
/// node set. Labels are `Some(true)` for anomalous, `Some(false)` for
/// benign, `None` for unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRelationGraph {
    relations: Vec<Relation>,
    features: Tensor,
    labels: Vec<Option<bool>>,
    node_ids: Vec<String>,
}

impl MultiRelationGraph {
    pub fn new(
        relations: Vec<Relation>,
        features: Tensor,
        labels: Vec<Option<bool>>,
    ) -> Result<Self> {
        let node_ids = (0..features.rows()).map(|i| i.to_string()).collect();
        Self::with_node_ids(relations, features, labels, node_ids)
    }

    pub fn with_node_ids(
        relations: Vec<Relation>,
        features: Tensor,
        labels: Vec<Option<bool>>,
        node_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        if relations.is_empty() {
            return Err(Error::Graph("at least one relation is required".into()));
        }
        if features.cols() == 0 {
            return Err(Error::Graph("feature dimension must be at least 1".into()));
        }
        if let Some(r) = relations.iter().find(|r| r.adjacency.n() != n) {
            return Err(Error::Graph(format!(
                "relation '{}' has {} nodes, features have {n}",
                r.name,
                r.adjacency.n()
            )));
        }
        if labels.len() != n {
            return Err(Error::Graph(format!("{} labels for {n} nodes", labels.len())));
        }
        if node_ids.len() != n {
            return Err(Error::Graph(format!("{} node ids for {n} nodes", node_ids.len())));
        }
        Ok(Self {
            relations,
            features,
            labels,
            node_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<bool>] {
        &self.labels
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Indices of labeled nodes, ascending.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Union of all relations with summed weights.
    pub fn merged(&self) -> SparseAdjacency {
        merge_relations(self.relations.iter().map(|r| &r.adjacency))
            .expect("relations share the node count")
    }

    /// Applies a node permutation: node `i` moves to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::Graph("permutation length mismatch".into()));
        }
        let mut inv = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inv[p] != usize::MAX {
                return Err(Error::Graph("not a permutation".into()));
            }
            inv[p] = i;
        }
        let features = self.features.select_rows(&inv);
        let labels = inv.iter().map(|&i| self.labels[i]).collect();
        let node_ids = inv.iter().map(|&i| self.node_ids[i].clone()).collect();
        let relations = self
            .relations
            .iter()
            .map(|r| {
                let c = r.adjacency.csr();
                let trip = (0..n)
                    .flat_map(|i| c.row(i).map(move |(j, v)| (perm[i], perm[j], v)))
                    .collect();
                Ok(Relation {
                    name: r.name.clone(),
                    adjacency: SparseAdjacency::from_triplets(n, trip)?,
                })
            })
            .collect::<Result<_>>()?;
        Self::with_node_ids(relations, features, labels, node_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultiRelationGraph {
        let rel = Relation {
            name: "f".into(),
            adjacency: SparseAdjacency::from_undirected_edges(3, &[(0, 1, 1.0)]).unwrap(),
        };
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        MultiRelationGraph::new(vec![rel], x, vec![Some(true), None, Some(false)]).unwrap()
    }

    #[test]
    fn validates_shapes() {
        let g = tiny();
        assert_eq!(g.labeled_nodes(), vec![0, 2]);
        let x = Tensor::zeros(2, 1);
        assert!(MultiRelationGraph::new(g.relations().to_vec(), x, vec![None; 2]).is_err());
        assert!(MultiRelationGraph::new(vec![], g.features().clone(), vec![None; 3]).is_err());
        assert!(MultiRelationGraph::new(
            g.relations().to_vec(),
            Tensor::zeros(3, 0),
            vec![None; 3]
        )
        .is_err());
    }

    #[test]
    fn permutation_moves_everything() {
        let g = tiny();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.features().to_rows(), vec![vec![2.0], vec![3.0], vec![1.0]]);
        assert_eq!(p.labels(), &[None, Some(false), Some(true)]);
        assert_eq!(p.relations()[0].adjacency.csr().get(2, 0), 1.0);
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}
