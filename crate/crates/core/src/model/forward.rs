use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::graph::{normalize, MultiRelationGraph, NormalizedAdjacency, SparseAdjacency};
use crate::layers::{
    discriminate, enhanced_aggregate, fuse_relations, gat_forward, gcn_stack, AttentionGraph,
    GatOutput, NORM_EPS,
};

use super::config::Variant;
use super::params::{ModelParams, Params};

/// A graph with everything the forward pass needs precomputed: normalized
/// per-relation adjacencies, the merged adjacency and its attention
/// structures.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Tensor,
    pub labels: Vec<Option<bool>>,
    pub normalized: Vec<NormalizedAdjacency>,
    pub merged: SparseAdjacency,
    pub attention: AttentionGraph,
}

impl PreparedGraph {
    pub fn new(g: &MultiRelationGraph) -> Result<Self> {
        let normalized = g
            .relations()
            .iter()
            .map(|r| normalize(&r.adjacency))
            .collect::<Result<Vec<_>>>()?;
        let merged = g.merged();
        Ok(Self {
            features: g.features().clone(),
            labels: g.labels().to_vec(),
            normalized,
            attention: AttentionGraph::new(&merged),
            merged,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.normalized.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Intermediate and final values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per-relation GCN outputs (empty for PR).
    pub relation_outputs: Vec<Var>,
    /// Attention-layer input: the fused (or, for PR, summed) representation.
    pub fused: Var,
    pub gat: GatOutput,
    /// Final embeddings fed to the discriminator.
    pub embeddings: Var,
    /// `n×1` anomaly probabilities.
    pub probs: Var,
}

/// Records the pipeline for `variant` on `tape`.
pub fn forward(
    tape: &mut Tape,
    graph: &PreparedGraph,
    params: &Params<Var>,
    variant: Variant,
) -> Result<ForwardOutput> {
    let x = tape.constant(graph.features.clone());
    let (relation_outputs, fused) = match variant {
        Variant::Full | Variant::Pa => {
            if params.gcn.len() != graph.n_relations() {
                return Err(Error::Config(format!(
                    "model has {} relation stacks, graph has {} relations",
                    params.gcn.len(),
                    graph.n_relations()
                )));
            }
            let outs = graph
                .normalized
                .iter()
                .zip(&params.gcn)
                .map(|(adj, stack)| gcn_stack(tape, adj, x, stack))
                .collect::<Result<Vec<_>>>()?;
            let z = fuse_relations(tape, &outs)?;
            (outs, z)
        }
        Variant::Pr => {
            if !params.gcn.is_empty() {
                return Err(Error::Config("PR model must not carry GCN weights".into()));
            }
            (Vec::new(), plain_relation_sum(tape, graph, x)?)
        }
    };
    let gat = gat_forward(tape, &graph.attention, fused, &params.gat)?;
    let embeddings = match variant {
        Variant::Pa => gat.h,
        Variant::Full | Variant::Pr => enhanced_aggregate(tape, &graph.attention, gat.h)?,
    };
    let probs = discriminate(tape, embeddings, &params.clf)?;
    Ok(ForwardOutput {
        relation_outputs,
        fused,
        gat,
        embeddings,
        probs,
    })
}

/// PR input: `norm(Σ_r Â_r X)`.
pub fn plain_relation_sum(tape: &mut Tape, graph: &PreparedGraph, x: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for adj in &graph.normalized {
        let p = tape.sp_matmul(adj.shared(), x)?;
        acc = Some(match acc {
            None => p,
            Some(a) => tape.add(a, p)?,
        });
    }
    let Some(sum) = acc else {
        return shape_err("plain_relation_sum", "graph has no relations");
    };
    Ok(tape.row_l2_normalize(sum, NORM_EPS))
}

/// Embeddings and probabilities of every node, with no gradient tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub embeddings: Tensor,
    pub probs: Vec<f64>,
}

pub fn predict(graph: &PreparedGraph, params: &ModelParams, variant: Variant) -> Result<Prediction> {
    let mut tape = Tape::new();
    let vars = params.lift_constant(&mut tape);
    let out = forward(&mut tape, graph, &vars, variant)?;
    Ok(Prediction {
        embeddings: tape.value(out.embeddings).clone(),
        probs: tape.value(out.probs).data().to_vec(),
    })
}
