use log::debug;
use rand::seq::SliceRandom;

use crate::autodiff::{adam_step, bce_term, AdamState, SplitMix64, Tape};
use crate::error::{Error, Result};
use crate::layers::loss;

use super::batch::sample_batch;
use super::config::ModelConfig;
use super::forward::{forward, predict, PreparedGraph};
use super::params::ModelParams;

/// Per-epoch record; the evaluation fields are filled only when a
/// monitoring split is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Parameters from the epoch with the lowest monitored loss.
    pub best: Option<(usize, ModelParams)>,
}

/// Seeds for one epoch, alternating positive/negative so every batch is
/// class-balanced. Both pools are shuffled; the smaller one is reshuffled
/// and reused whenever it runs out, until the larger one has been consumed.
pub fn epoch_order(positives: &[usize], negatives: &[usize], rng: &mut SplitMix64) -> Vec<usize> {
    if positives.is_empty() || negatives.is_empty() {
        let mut all = [positives, negatives].concat();
        all.shuffle(rng);
        return all;
    }
    let pos_major = positives.len() >= negatives.len();
    let (major, minor) = if pos_major {
        (positives, negatives)
    } else {
        (negatives, positives)
    };
    let mut major = major.to_vec();
    major.shuffle(rng);
    let mut minor_pool = minor.to_vec();
    minor_pool.shuffle(rng);
    let mut out = Vec::with_capacity(2 * major.len());
    let mut k = 0;
    for m in major {
        if k == minor_pool.len() {
            minor_pool.shuffle(rng);
            k = 0;
        }
        let other = minor_pool[k];
        k += 1;
        if pos_major {
            out.extend([m, other]);
        } else {
            out.extend([other, m]);
        }
    }
    out
}

/// Splits training seeds by label, rejecting single-class splits.
pub fn class_pools(graph: &PreparedGraph, train_nodes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in train_nodes {
        match graph.labels.get(i).copied().flatten() {
            Some(true) => pos.push(i),
            Some(false) => neg.push(i),
            None => return Err(Error::Graph(format!("training node {i} is unlabeled"))),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    Ok((pos, neg))
}

/// Mean cross-entropy of `nodes` under a full-graph forward pass.
pub fn split_loss(
    graph: &PreparedGraph,
    params: &ModelParams,
    config: &ModelConfig,
    nodes: &[usize],
) -> Result<(f64, f64)> {
    let pred = predict(graph, params, config.variant)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for &i in nodes {
        let y = graph.labels[i].ok_or_else(|| Error::Graph(format!("node {i} is unlabeled")))?;
        let p = pred.probs[i];
        total += bce_term(p, f64::from(u8::from(y)));
        correct += usize::from((p >= 0.5) == y);
    }
    let n = nodes.len().max(1) as f64;
    Ok((total / n, correct as f64 / n))
}

/// Mini-batch training: per batch, expand the seeds, run the forward pass,
/// take the loss over the seeds, back-propagate and apply one Adam step.
///
/// With `monitor`, the split is evaluated after every epoch; the best epoch
/// is kept and `config.patience` enables early stopping.
pub fn train(
    graph: &PreparedGraph,
    train_nodes: &[usize],
    config: &ModelConfig,
    monitor: Option<&[usize]>,
) -> Result<TrainOutcome> {
    train_from(
        graph,
        train_nodes,
        config,
        monitor,
        ModelParams::init(config, graph.n_relations(), graph.feature_dim())?,
    )
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    graph: &PreparedGraph,
    train_nodes: &[usize],
    config: &ModelConfig,
    monitor: Option<&[usize]>,
    mut params: ModelParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (pos, neg) = class_pools(graph, train_nodes)?;
    let mut tensors = params.tensors();
    let mut adam = AdamState::new(&tensors);
    let mut order_rng = SplitMix64::derive(config.seed, "batch-order");
    let hops = config.hops();
    let mut losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let order = epoch_order(&pos, &neg, &mut order_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for seeds in order.chunks(config.batch_size) {
            let batch = sample_batch(graph, seeds, hops, config.max_neighbors)?;
            let mut tape = Tape::new();
            let vars = params.lift(&mut tape);
            let out = forward(&mut tape, &batch.graph, &vars, config.variant)?;
            let seed_probs = tape.gather_rows(out.probs, &batch.seed_local)?;
            let leaves: Vec<_> = vars.leaves().into_iter().copied().collect();
            let l = loss(
                &mut tape,
                seed_probs,
                &batch.seed_label_values(),
                &leaves,
                config.lambda,
            )?;
            let value = tape.value(l).get(0, 0);
            let grads = tape.backward(l)?;
            let grads: Vec<_> = leaves.iter().map(|&v| grads.wrt(v)).collect();
            adam_step(&mut tensors, &grads, &mut adam, config.lr)?;
            params = params.with_leaves(tensors.clone())?;
            losses.push(value);
            epoch_loss += value;
            steps += 1;
        }
        let mean_train_loss = epoch_loss / steps.max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            mean_train_loss,
            eval_loss: None,
            eval_accuracy: None,
        };
        if let Some(nodes) = monitor.filter(|m| !m.is_empty()) {
            let (eval_loss, acc) = split_loss(graph, &params, config, nodes)?;
            record.eval_loss = Some(eval_loss);
            record.eval_accuracy = Some(acc);
            if best.as_ref().is_none_or(|b| eval_loss < b.1) {
                best = Some((epoch, eval_loss, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        debug!("epoch {epoch}: train loss {mean_train_loss:.6}");
        epochs.push(record);
        if config.patience.is_some_and(|p| monitor.is_some() && since_best >= p) {
            debug!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        losses,
        epochs,
        best: best.map(|(e, _, p)| (e, p)),
    })
}
