//! Train/evaluate grids over variants, training percentages and seeds.

use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::SplitMix64;
use crate::error::{Error, Result};
use crate::model::{train, ModelConfig, PreparedGraph, Variant};

use super::metrics::{evaluate, MetricsReport};

/// Stratified random split of the labeled nodes. Each class contributes
/// `floor(pct% of its size)` nodes to training (at least one when the
/// class has two or more members); the rest form the test set.
pub fn stratified_split(
    labels: &[Option<bool>],
    train_pct: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_pct > 0.0 && train_pct < 100.0) {
        return Err(Error::Config(format!("train_pct {train_pct} not in (0, 100)")));
    }
    let mut rng = SplitMix64::derive(seed, "split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut pool: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == Some(class))
            .collect();
        pool.shuffle(&mut rng);
        let mut k = (pool.len() as f64 * train_pct / 100.0).floor() as usize;
        if k == 0 && pool.len() >= 2 {
            k = 1;
        }
        train.extend_from_slice(&pool[..k]);
        test.extend_from_slice(&pool[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Base configuration; `variant` and `seed` are overridden per run.
    pub model: ModelConfig,
    pub variants: Vec<Variant>,
    pub train_pcts: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Record wall-clock time per run. Timing makes `results.csv` differ
    /// between otherwise identical runs.
    pub timing: bool,
    /// Also evaluate the epoch with the lowest test loss.
    pub track_best: bool,
}

impl ExperimentSpec {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            variants: vec![Variant::Full],
            train_pcts: vec![10.0, 20.0, 30.0, 40.0],
            seeds: (0..5).collect(),
            timing: true,
            track_best: false,
        }
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub variant: Variant,
    pub train_pct: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub recall: f64,
    pub loss: f64,
    pub wall_time_s: Option<f64>,
    #[serde(skip)]
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub best: Option<(usize, MetricsReport)>,
    #[serde(skip)]
    pub train_losses: Vec<f64>,
}

/// Split, train and evaluate one configuration.
pub fn run_single(
    graph: &PreparedGraph,
    model: &ModelConfig,
    train_pct: f64,
    track_best: bool,
) -> Result<RunResult> {
    let start = Instant::now();
    let (train_nodes, test_nodes) = stratified_split(&graph.labels, train_pct, model.seed)?;
    let monitor = track_best.then_some(&test_nodes[..]);
    let outcome = train(graph, &train_nodes, model, monitor)?;
    let metrics = evaluate(&outcome.params, graph, model.variant, &test_nodes)?;
    let best = match &outcome.best {
        Some((epoch, p)) => Some((*epoch, evaluate(p, graph, model.variant, &test_nodes)?)),
        None => None,
    };
    let elapsed = start.elapsed().as_secs_f64();
    info!(
        "{} pct={train_pct} seed={}: accuracy {:.4} recall {:.4} ({elapsed:.1}s)",
        model.variant, model.seed, metrics.accuracy, metrics.recall
    );
    Ok(RunResult {
        variant: model.variant,
        train_pct,
        seed: model.seed,
        accuracy: metrics.accuracy,
        recall: metrics.recall,
        loss: metrics.loss,
        wall_time_s: Some(elapsed),
        metrics,
        best,
        train_losses: outcome.losses,
    })
}

/// Runs every (variant, train_pct, seed) combination. Rows come back sorted
/// by variant, percentage and seed.
pub fn run_experiment(graph: &PreparedGraph, spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        for &pct in &spec.train_pcts {
            for &seed in &spec.seeds {
                let model = ModelConfig {
                    variant,
                    seed,
                    ..spec.model.clone()
                };
                let mut row = run_single(graph, &model, pct, spec.track_best)?;
                if !spec.timing {
                    row.wall_time_s = None;
                }
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.train_pct.total_cmp(&b.train_pct))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median metrics for one (variant, train_pct) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub train_pct: f64,
    pub runs: usize,
    pub median_accuracy: f64,
    pub median_recall: f64,
    pub median_loss: f64,
}

pub fn summarize(rows: &[RunResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Variant, f64)> = rows.iter().map(|r| (r.variant, r.train_pct)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|(variant, pct)| {
            let cell: Vec<&RunResult> = rows
                .iter()
                .filter(|r| r.variant == variant && r.train_pct == pct)
                .collect();
            let col = |f: fn(&RunResult) -> f64| median(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                variant,
                train_pct: pct,
                runs: cell.len(),
                median_accuracy: col(|r| r.accuracy),
                median_recall: col(|r| r.recall),
                median_loss: col(|r| r.loss),
            }
        })
        .collect()
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `variant,train_pct,seed,accuracy,recall,loss,wall_time_s`.
/// Wall time is left empty when it was not recorded.
pub fn write_results(rows: &[RunResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant", "train_pct", "seed", "accuracy", "recall", "loss", "wall_time_s",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            fmt_f(r.train_pct),
            r.seed.to_string(),
            fmt_f(r.accuracy),
            fmt_f(r.recall),
            fmt_f(r.loss),
            r.wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "train_pct",
        "runs",
        "median_accuracy",
        "median_recall",
        "median_loss",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            fmt_f(r.train_pct),
            r.runs.to_string(),
            fmt_f(r.median_accuracy),
            fmt_f(r.median_recall),
            fmt_f(r.median_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Best-epoch metrics (lowest test loss), labeled with the epoch.
pub fn write_best(rows: &[RunResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "train_pct", "seed", "best_epoch", "accuracy", "recall", "loss"])?;
    for r in rows {
        if let Some((epoch, m)) = &r.best {
            w.write_record([
                r.variant.to_string(),
                fmt_f(r.train_pct),
                r.seed.to_string(),
                epoch.to_string(),
                fmt_f(m.accuracy),
                fmt_f(m.recall),
                fmt_f(m.loss),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gcn_layers: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub recall: f64,
    pub loss: f64,
}

/// Trains the full model for every `(gcn_layers, embed_dim)` pair.
pub fn run_sweep(
    graph: &PreparedGraph,
    base: &ModelConfig,
    gcn_layers: &[usize],
    embed_dims: &[usize],
    seeds: &[u64],
    train_pct: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &layers in gcn_layers {
        for &dim in embed_dims {
            for &seed in seeds {
                let model = ModelConfig {
                    variant: Variant::Full,
                    gcn_layers: layers,
                    embed_dim: dim,
                    seed,
                    ..base.clone()
                };
                let r = run_single(graph, &model, train_pct, false)?;
                rows.push(SweepRow {
                    gcn_layers: layers,
                    embed_dim: dim,
                    seed,
                    accuracy: r.accuracy,
                    recall: r.recall,
                    loss: r.loss,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gcn_layers", "embed_dim", "seed", "accuracy", "recall", "loss"])?;
    for r in rows {
        w.write_record([
            r.gcn_layers.to_string(),
            r.embed_dim.to_string(),
            r.seed.to_string(),
            fmt_f(r.accuracy),
            fmt_f(r.recall),
            fmt_f(r.loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}
