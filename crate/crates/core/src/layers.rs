//! Network layers recorded on a [`Tape`]: per-relation graph convolution,
//! relation fusion, multi-head graph attention, the enhanced mean
//! aggregator, the discriminator and the training loss.
//!
//! Parameter containers are generic over their leaf type so the same
//! structure holds stored tensors and their tape handles ([`Var`]).

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::graph::{Csr, NormalizedAdjacency, SparseAdjacency};

/// Negative slope of the leaky ReLU in attention scoring.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Rows with an L2 norm below this are left as they are by the fusion step.
pub const NORM_EPS: f64 = 1e-12;

/// Weight stack for one relation: `W⁽¹⁾ … W⁽ᴸ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams<T> {
    pub weights: Vec<T>,
}

/// One attention head: a linear transform plus the two halves of the
/// attention vector, applied to the centre node and the neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct GatHead<T> {
    pub transform: T,
    pub att_src: T,
    pub att_dst: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams<T> {
    pub heads: Vec<GatHead<T>>,
}

/// Hidden layer `d′ → d′` with ReLU, then `d′ → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T> {
    pub hidden_weight: T,
    pub hidden_bias: T,
    pub out_weight: T,
    pub out_bias: T,
}

/// Sparse structures the attention and aggregation layers run on, built
/// once per graph from the merged relation adjacency.
#[derive(Debug, Clone)]
pub struct AttentionGraph {
    /// Merged adjacency plus the identity, as an attention pattern.
    pub pattern: Arc<Csr>,
    /// Neighbor-mean operator of the merged adjacency (no self-loops).
    pub mean: Arc<Csr>,
}

impl AttentionGraph {
    pub fn new(merged: &SparseAdjacency) -> Self {
        Self {
            pattern: Arc::new(merged.csr().with_self_loops()),
            mean: Arc::new(merged.mean_operator()),
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }
}

/// `ReLU(Â H W)`.
pub fn gcn_forward(tape: &mut Tape, adj: &NormalizedAdjacency, h: Var, w: Var) -> Result<Var> {
    let (d_in, d_out) = tape.value(w).shape();
    if tape.value(h).cols() != d_in {
        return shape_err(
            "gcn_forward",
            format!("features {:?} x weight {:?}", tape.value(h).shape(), (d_in, d_out)),
        );
    }
    // Propagate through whichever side is narrower.
    let pre = if d_in <= d_out {
        let ah = tape.sp_matmul(adj.shared(), h)?;
        tape.matmul(ah, w)?
    } else {
        let hw = tape.matmul(h, w)?;
        tape.sp_matmul(adj.shared(), hw)?
    };
    Ok(tape.relu(pre))
}

/// Runs a full weight stack on one relation starting from `x`.
pub fn gcn_stack(
    tape: &mut Tape,
    adj: &NormalizedAdjacency,
    x: Var,
    params: &GcnLayerParams<Var>,
) -> Result<Var> {
    params
        .weights
        .iter()
        .try_fold(x, |h, &w| gcn_forward(tape, adj, h, w))
}

/// Concatenates the per-relation outputs in relation order, then
/// L2-normalizes each row.
pub fn fuse_relations(tape: &mut Tape, per_relation: &[Var]) -> Result<Var> {
    let Some(&first) = per_relation.first() else {
        return shape_err("fuse_relations", "no relation outputs");
    };
    let shape = tape.value(first).shape();
    if let Some(v) = per_relation.iter().find(|v| tape.value(**v).shape() != shape) {
        return shape_err(
            "fuse_relations",
            format!("{:?} vs {:?}", tape.value(*v).shape(), shape),
        );
    }
    let cat = tape.concat_cols(per_relation)?;
    Ok(tape.row_l2_normalize(cat, NORM_EPS))
}

/// Output of one attention layer.
#[derive(Debug, Clone)]
pub struct GatOutput {
    pub h: Var,
    /// Per head, the `nnz×1` attention weights aligned with the pattern.
    pub attention: Vec<Var>,
}

/// Multi-head attention over `graph.pattern`. Each head scores an edge
/// `(i, j)` as `leaky_relu(a_srcᵀ T h_i + a_dstᵀ T h_j)`, normalizes the
/// scores over row `i`, and averages the transformed neighbors with those
/// weights. Heads are concatenated and passed through ReLU.
pub fn gat_forward(
    tape: &mut Tape,
    graph: &AttentionGraph,
    h: Var,
    params: &GatLayerParams<Var>,
) -> Result<GatOutput> {
    if tape.value(h).rows() != graph.n() {
        return shape_err(
            "gat_forward",
            format!("{} rows for a {}-node graph", tape.value(h).rows(), graph.n()),
        );
    }
    let mut outs = Vec::with_capacity(params.heads.len());
    let mut attention = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let th = tape.matmul(h, head.transform)?;
        let s = tape.matmul(th, head.att_src)?;
        let t = tape.matmul(th, head.att_dst)?;
        let e = tape.edge_logits(graph.pattern.clone(), s, t)?;
        let e = tape.leaky_relu(e, LEAKY_SLOPE);
        let alpha = tape.edge_softmax(graph.pattern.clone(), e)?;
        outs.push(tape.edge_spmm(graph.pattern.clone(), alpha, th)?);
        attention.push(alpha);
    }
    let cat = tape.concat_cols(&outs)?;
    Ok(GatOutput {
        h: tape.relu(cat),
        attention,
    })
}

/// `ReLU(z_v + mean_{j ∈ N(v)} z_j)`; isolated nodes take a zero mean.
pub fn enhanced_aggregate(tape: &mut Tape, graph: &AttentionGraph, z: Var) -> Result<Var> {
    let m = tape.sp_matmul(graph.mean.clone(), z)?;
    let s = tape.add(z, m)?;
    Ok(tape.relu(s))
}

/// Anomaly probability per row of `z`.
pub fn discriminate(tape: &mut Tape, z: Var, clf: &ClassifierParams<Var>) -> Result<Var> {
    let hid = tape.matmul(z, clf.hidden_weight)?;
    let hid = tape.add_row(hid, clf.hidden_bias)?;
    let hid = tape.relu(hid);
    let logit = tape.matmul(hid, clf.out_weight)?;
    let logit = tape.add_row(logit, clf.out_bias)?;
    Ok(tape.sigmoid(logit))
}

/// Mean binary cross-entropy over the batch plus `λ·Σθ²` over `params`.
pub fn loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[f64],
    params: &[Var],
    lambda: f64,
) -> Result<Var> {
    let mut total = tape.bce_mean(probs, labels)?;
    if lambda > 0.0 {
        for &p in params {
            let sq = tape.sum_squares(p);
            let reg = tape.scale(sq, lambda);
            total = tape.add(total, reg)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::graph::normalize;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn gcn_identity_propagation() {
        let adj = normalize(&SparseAdjacency::empty(2)).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![1.0, 2.0], vec![0.0, 3.0]]));
        let w = tape.constant(Tensor::identity(2));
        let out = gcn_forward(&mut tape, &adj, h, w).unwrap();
        assert_eq!(tape.value(out), tape.value(h));
    }

    #[test]
    fn gcn_hand_product_and_zero_weight() {
        let u = SparseAdjacency::from_undirected_edges(2, &[(0, 1, 1.0)]).unwrap();
        let adj = normalize(&u).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![2.0], vec![4.0]]));
        let w = tape.constant(t(&[vec![1.0]]));
        let out = gcn_forward(&mut tape, &adj, h, w).unwrap();
        assert!(tape.value(out).max_abs_diff(&t(&[vec![3.0], vec![3.0]])) < 1e-12);
        let w0 = tape.constant(t(&[vec![0.0]]));
        let out = gcn_forward(&mut tape, &adj, h, w0).unwrap();
        assert_eq!(tape.value(out), &Tensor::zeros(2, 1));
        let bad = tape.constant(Tensor::zeros(3, 1));
        assert!(gcn_forward(&mut tape, &adj, h, bad).is_err());
    }

    #[test]
    fn fusion_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![3.0, 4.0]]));
        let z = fuse_relations(&mut tape, &[a]).unwrap();
        assert_eq!(tape.value(z), &t(&[vec![0.6, 0.8]]));

        let a = tape.constant(t(&[vec![1.0, 0.0]]));
        let b = tape.constant(t(&[vec![0.0, 1.0]]));
        let z = fuse_relations(&mut tape, &[a, b]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(tape.value(z).max_abs_diff(&t(&[vec![r, 0.0, 0.0, r]])) < 1e-15);

        let zero = tape.constant(Tensor::zeros(1, 2));
        let z = fuse_relations(&mut tape, &[zero, zero]).unwrap();
        assert_eq!(tape.value(z), &Tensor::zeros(1, 4));

        let wide = tape.constant(Tensor::zeros(1, 3));
        assert!(fuse_relations(&mut tape, &[a, wide]).is_err());
        assert!(fuse_relations(&mut tape, &[]).is_err());
    }

    fn head(tape: &mut Tape, d_in: usize, d_h: usize, seed: u64) -> GatHead<Var> {
        use crate::autodiff::xavier_init;
        GatHead {
            transform: tape.param(xavier_init(d_in, d_h, seed)),
            att_src: tape.param(xavier_init(d_h, 1, seed + 1)),
            att_dst: tape.param(xavier_init(d_h, 1, seed + 2)),
        }
    }

    #[test]
    fn gat_single_node() {
        let g = AttentionGraph::new(&SparseAdjacency::empty(1));
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![0.5, -1.0, 2.0]]));
        let params = GatLayerParams {
            heads: vec![head(&mut tape, 3, 2, 1), head(&mut tape, 3, 2, 5)],
        };
        let out = gat_forward(&mut tape, &g, h, &params).unwrap();
        for a in &out.attention {
            assert_eq!(tape.value(*a).data(), &[1.0]);
        }
        let mut expect = Vec::new();
        for hd in &params.heads {
            let th = tape.value(h).matmul(tape.value(hd.transform)).unwrap();
            expect.extend(th.data().iter().map(|v| v.max(0.0)));
        }
        assert_eq!(tape.value(out.h).data(), &expect[..]);
    }

    #[test]
    fn gat_identical_neighbors_attend_uniformly() {
        let merged =
            SparseAdjacency::from_undirected_edges(4, &[(0, 1, 1.0), (0, 2, 2.0), (2, 3, 1.0)])
                .unwrap();
        let g = AttentionGraph::new(&merged);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::filled(4, 3, 0.7));
        let params = GatLayerParams {
            heads: vec![head(&mut tape, 3, 4, 11)],
        };
        let out = gat_forward(&mut tape, &g, h, &params).unwrap();
        let alpha = tape.value(out.attention[0]).data();
        for i in 0..4 {
            let r = g.pattern.row_range(i);
            let k = r.len() as f64;
            for p in r {
                assert!((alpha[p] - 1.0 / k).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn aggregator_examples() {
        let mut tape = Tape::new();
        let g = AttentionGraph::new(&SparseAdjacency::empty(1));
        let z = tape.constant(t(&[vec![1.0, -1.0]]));
        let out = enhanced_aggregate(&mut tape, &g, z).unwrap();
        assert_eq!(tape.value(out), &t(&[vec![1.0, 0.0]]));

        let star = SparseAdjacency::from_undirected_edges(3, &[(0, 1, 1.0), (0, 2, 5.0)]).unwrap();
        let g = AttentionGraph::new(&star);
        let z = tape.constant(t(&[vec![0.0], vec![2.0], vec![4.0]]));
        let out = enhanced_aggregate(&mut tape, &g, z).unwrap();
        assert_eq!(tape.value(out).get(0, 0), 3.0);

        let z = tape.constant(Tensor::filled(3, 2, 0.25));
        let out = enhanced_aggregate(&mut tape, &g, z).unwrap();
        assert_eq!(tape.value(out), &Tensor::filled(3, 2, 0.5));
    }

    fn classifier(tape: &mut Tape, w1: Tensor, w2: Tensor) -> ClassifierParams<Var> {
        let d = w1.rows();
        ClassifierParams {
            hidden_weight: tape.param(w1),
            hidden_bias: tape.param(Tensor::zeros(1, d)),
            out_weight: tape.param(w2),
            out_bias: tape.param(Tensor::zeros(1, 1)),
        }
    }

    #[test]
    fn discriminator_examples() {
        let mut tape = Tape::new();
        let clf = classifier(&mut tape, Tensor::zeros(3, 3), Tensor::zeros(3, 1));
        let z = tape.constant(t(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.0, 9.0]]));
        let p = discriminate(&mut tape, z, &clf).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);

        // One hidden unit: hidden = relu(2·1) = 2, logit = 1.5·2 = 3.
        let clf = classifier(&mut tape, t(&[vec![2.0]]), t(&[vec![1.5]]));
        let z = tape.constant(t(&[vec![1.0]]));
        let p = discriminate(&mut tape, z, &clf).unwrap();
        let expect = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((tape.value(p).get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[vec![1.0]]));
        let l = loss(&mut tape, p, &[1.0], &[], 0.0).unwrap();
        assert!(tape.value(l).get(0, 0) < 1e-11);

        let p = tape.constant(t(&[vec![0.5]]));
        let l = loss(&mut tape, p, &[1.0], &[], 0.0).unwrap();
        assert!((tape.value(l).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);

        let theta = tape.param(t(&[vec![2.0]]));
        let l = loss(&mut tape, p, &[1.0], &[theta], 0.01).unwrap();
        assert!((tape.value(l).get(0, 0) - (std::f64::consts::LN_2 + 0.04)).abs() < 1e-12);
    }
}
