use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::bce_term;
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams, PreparedGraph, Variant};

/// A node is predicted anomalous when its probability reaches this.
pub const THRESHOLD: f64 = 0.5;

/// Detection metrics with the anomalous class (label 1) as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_eval: usize,
    /// Mean cross-entropy over the evaluated nodes.
    pub loss: f64,
}

impl MetricsReport {
    /// Metrics of probabilities against labels, thresholded at [`THRESHOLD`].
    pub fn from_probs(probs: &[f64], labels: &[bool]) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::Shape {
                op: "metrics",
                detail: format!("{} probabilities for {} labels", probs.len(), labels.len()),
            });
        }
        if probs.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        let mut loss = 0.0;
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= THRESHOLD, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
            loss += bce_term(p, f64::from(u8::from(y)));
        }
        let n_eval = probs.len();
        let recall = if tp + fn_ == 0 {
            warn!("recall undefined: no anomalous nodes in the evaluation split; reporting 0");
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        Ok(Self {
            accuracy: (tp + tn) as f64 / n_eval as f64,
            recall,
            tp,
            fp,
            tn,
            fn_,
            n_eval,
            loss: loss / n_eval as f64,
        })
    }
}

/// Full-graph forward pass, then metrics over `eval_nodes`.
pub fn evaluate(
    params: &ModelParams,
    graph: &PreparedGraph,
    variant: Variant,
    eval_nodes: &[usize],
) -> Result<MetricsReport> {
    if eval_nodes.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let labels = eval_nodes
        .iter()
        .map(|&i| {
            graph
                .labels
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Graph(format!("evaluation node {i} is unlabeled or out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = predict(graph, params, variant)?;
    let probs: Vec<f64> = eval_nodes.iter().map(|&i| pred.probs[i]).collect();
    MetricsReport::from_probs(&probs, &labels)
}
