//! Finite-difference check of the full model gradient.

use serde::Serialize;

use crate::autodiff::{BackwardFault, SplitMix64, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{MultiRelationGraph, Relation, SparseAdjacency};
use crate::layers::loss;
use crate::model::{forward, ModelConfig, ModelParams, PreparedGraph, Variant};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is essentially zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckOptions {
    pub n_nodes: usize,
    pub n_relations: usize,
    pub feature_dim: usize,
    pub config: ModelConfig,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    #[serde(skip)]
    pub fault: Option<BackwardFault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            n_nodes: 12,
            n_relations: 2,
            feature_dim: 5,
            config: ModelConfig {
                gcn_layers: 2,
                gat_heads: 2,
                embed_dim: 8,
                lambda: 0.001,
                ..ModelConfig::default()
            },
            step: FD_STEP,
            tolerance: MAX_REL_ERROR,
            seed: 7,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub n_params: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub passed: bool,
}

/// Random graph with every node labeled and both classes present.
pub fn random_graph(opts: &GradcheckOptions) -> Result<MultiRelationGraph> {
    let n = opts.n_nodes;
    if n < 2 {
        return Err(Error::Config("gradcheck needs at least 2 nodes".into()));
    }
    let mut rng = SplitMix64::derive(opts.seed, "gradcheck-graph");
    let mut relations = Vec::with_capacity(opts.n_relations);
    for r in 0..opts.n_relations {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.next_f64() < 0.3 {
                    edges.push((i, j, 1.0 + rng.below(3) as f64));
                }
            }
        }
        relations.push(Relation {
            name: format!("r{r}"),
            adjacency: SparseAdjacency::from_undirected_edges(n, &edges)?,
        });
    }
    let x: Vec<f64> = (0..n * opts.feature_dim)
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let features = Tensor::from_vec(n, opts.feature_dim, x)?;
    let labels = (0..n).map(|i| Some(i % 3 == 0)).collect();
    MultiRelationGraph::new(relations, features, labels)
}

fn objective(
    graph: &PreparedGraph,
    params: &ModelParams,
    variant: Variant,
    labels: &[f64],
    lambda: f64,
    fault: Option<BackwardFault>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    tape.set_fault(fault);
    let vars = params.lift(&mut tape);
    let out = forward(&mut tape, graph, &vars, variant)?;
    let leaves: Vec<_> = vars.leaves().into_iter().copied().collect();
    let l = loss(&mut tape, out.probs, labels, &leaves, lambda)?;
    let value = tape.value(l).get(0, 0);
    let grads = tape.backward(l)?;
    Ok((value, leaves.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Compares the analytic gradient of loss+penalty with central differences
/// for every parameter entry.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let graph = PreparedGraph::new(&random_graph(opts)?)?;
    let config = &opts.config;
    config.validate()?;
    let params = ModelParams::init(config, graph.n_relations(), graph.feature_dim())?;
    let labels: Vec<f64> = graph
        .labels
        .iter()
        .map(|y| f64::from(u8::from(y.unwrap_or(false))))
        .collect();
    let (_, analytic) = objective(&graph, &params, config.variant, &labels, config.lambda, opts.fault)?;
    let named = params.to_named();
    if analytic.len() != named.len() {
        return Err(Error::Shape {
            op: "gradcheck",
            detail: format!(
                "{} analytic gradients for {} parameter tensors",
                analytic.len(),
                named.len()
            ),
        });
    }

    let mut tensors = params.tensors();
    let mut max_rel = 0.0f64;
    let mut worst = (String::new(), 0);
    let mut checked = 0;
    for k in 0..tensors.len() {
        for idx in 0..tensors[k].data().len() {
            let orig = tensors[k].data()[idx];
            let eval_at = |v: f64, tensors: &mut Vec<Tensor>| -> Result<f64> {
                tensors[k].data_mut()[idx] = v;
                let p = params.with_leaves(tensors.clone())?;
                Ok(objective(&graph, &p, config.variant, &labels, config.lambda, None)?.0)
            };
            let plus = eval_at(orig + opts.step, &mut tensors)?;
            let minus = eval_at(orig - opts.step, &mut tensors)?;
            tensors[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst = (named[k].0.clone(), idx);
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        variant: config.variant,
        n_params: params.count(),
        entries_checked: checked,
        max_rel_error: max_rel,
        worst,
        passed: max_rel < opts.tolerance,
    })
}
