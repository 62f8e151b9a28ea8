mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use raugnn::eval::{
    evaluate, gradcheck, run_experiment, run_sweep, stratified_split, summarize, write_best,
    write_results, write_summary, write_sweep, ExperimentSpec, GradcheckOptions,
};
use raugnn::graph::io::{load_any, save_bin, write_node_index};
use raugnn::graph::{MultiRelationGraph, DEFAULT_ENTITY_DEGREE_CAP};
use raugnn::model::{
    load_checkpoint, save_checkpoint, train, CheckpointMeta, ModelConfig, PreparedGraph, Variant,
};
use raugnn::synth::{generate, SynthConfig};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "raugnn", version, about = "Multi-relation graph anomaly detection")]
struct Cli {
    /// TOML file of `key = value` defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a graph from an ingest directory and cache it in binary form.
    Ingest(IngestArgs),
    /// Generate a synthetic labeled graph.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split.
    Eval(EvalArgs),
    /// Train and evaluate over variants, training percentages and seeds.
    Experiment(ExperimentArgs),
    /// Sweep GCN depth and embedding width for the full model.
    Sweep(SweepArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory with features.csv, labels.csv and relation files.
    dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Entities shared by more users than this are dropped before projection.
    #[arg(long)]
    entity_cap: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    anomaly_frac: Option<f64>,
    #[arg(long)]
    camouflage_rate: Option<f64>,
    #[arg(long)]
    feature_shift: Option<f64>,
    #[arg(long)]
    n_relations: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives the ingest layout plus graph.bin.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    gcn_layers: Option<usize>,
    #[arg(long)]
    gat_heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hop_count: Option<usize>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct GraphArg {
    /// graph.bin cache or ingest directory.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    entity_cap: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    train_pct: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated training percentages.
    #[arg(long)]
    train_pcts: Option<String>,
    /// Number of seeds, run as 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Comma-separated variants (full, pr, pa).
    #[arg(long)]
    variants: Option<String>,
    /// results.csv path; summary.csv is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave wall_time_s empty so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
    /// Also report the epoch with the lowest test loss (best_epoch.csv).
    #[arg(long)]
    best_epoch: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    gcn_layer_grid: Option<String>,
    #[arg(long)]
    embed_dim_grid: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    train_pct: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped to exit codes.
enum Outcome {
    Ok,
    GradcheckFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::GradcheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, &file),
        Command::Synth(a) => synth(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Eval(a) => eval_cmd(a, &file),
        Command::Experiment(a) => experiment(a, &file),
        Command::Sweep(a) => sweep(a, &file),
        Command::Gradcheck(a) => gradcheck_cmd(a, &file),
    }
}

fn ingest(a: IngestArgs, file: &FileConfig) -> Result<Outcome> {
    let cap = pick(a.entity_cap, file, "entity_cap")?.unwrap_or(DEFAULT_ENTITY_DEGREE_CAP);
    let out = pick(a.out, file, "out")?.unwrap_or_else(|| PathBuf::from("graph.bin"));
    let graph = raugnn::graph::io::load_dir(&a.dir, cap)
        .with_context(|| format!("ingesting {}", a.dir.display()))?;
    ensure_parent(&out)?;
    save_bin(&graph, &out)?;
    let index = out.with_file_name("node_index.csv");
    write_node_index(&graph, &index)?;
    info!(
        "{} nodes, {} relations -> {} ({})",
        graph.n(),
        graph.n_relations(),
        out.display(),
        index.display()
    );
    Ok(Outcome::Ok)
}

fn synth(a: SynthArgs, file: &FileConfig) -> Result<Outcome> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        n_users: pick(a.n_users, file, "n_users")?.unwrap_or(d.n_users),
        anomaly_fraction: pick(a.anomaly_frac, file, "anomaly_frac")?.unwrap_or(d.anomaly_fraction),
        camouflage_rate: pick(a.camouflage_rate, file, "camouflage_rate")?.unwrap_or(d.camouflage_rate),
        feature_shift: pick(a.feature_shift, file, "feature_shift")?.unwrap_or(d.feature_shift),
        n_relations: pick(a.n_relations, file, "n_relations")?.unwrap_or(d.n_relations),
        feature_dim: pick(a.feature_dim, file, "feature_dim")?.unwrap_or(d.feature_dim),
        seed: pick(a.seed, file, "seed")?.unwrap_or(d.seed),
        ..d
    };
    let out = pick(a.out, file, "out")?.unwrap_or_else(|| PathBuf::from("synth"));
    let data = generate(&config)?;
    fs::create_dir_all(&out)?;
    data.write_dir(&out)?;
    save_bin(&data.graph, &out.join("graph.bin"))?;
    write_node_index(&data.graph, &out.join("node_index.csv"))?;
    fs::write(out.join("synth.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    info!("wrote synthetic graph with {} users to {}", config.n_users, out.display());
    Ok(Outcome::Ok)
}

fn load_graph(a: GraphArg, file: &FileConfig) -> Result<MultiRelationGraph> {
    let Some(path) = pick(a.graph, file, "graph")? else {
        bail!("--graph is required");
    };
    let cap = pick(a.entity_cap, file, "entity_cap")?.unwrap_or(DEFAULT_ENTITY_DEGREE_CAP);
    load_any(&path, cap).with_context(|| format!("loading graph {}", path.display()))
}

fn model_config(a: ModelArgs, seed: Option<u64>, file: &FileConfig) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let config = ModelConfig {
        variant: pick(a.variant, file, "variant")?.unwrap_or(d.variant),
        gcn_layers: pick(a.gcn_layers, file, "gcn_layers")?.unwrap_or(d.gcn_layers),
        gat_heads: pick(a.gat_heads, file, "gat_heads")?.unwrap_or(d.gat_heads),
        embed_dim: pick(a.embed_dim, file, "embed_dim")?.unwrap_or(d.embed_dim),
        lr: pick(a.lr, file, "lr")?.unwrap_or(d.lr),
        lambda: pick(a.lambda, file, "lambda")?.unwrap_or(d.lambda),
        batch_size: pick(a.batch_size, file, "batch_size")?.unwrap_or(d.batch_size),
        epochs: pick(a.epochs, file, "epochs")?.unwrap_or(d.epochs),
        seed: pick(seed, file, "seed")?.unwrap_or(d.seed),
        hop_count: pick(a.hop_count, file, "hop_count")?,
        max_neighbors: pick(a.max_neighbors, file, "max_neighbors")?,
        patience: pick(a.patience, file, "patience")?,
    };
    config.validate()?;
    Ok(config)
}

fn train_cmd(a: TrainArgs, file: &FileConfig) -> Result<Outcome> {
    let graph = load_graph(a.graph, file)?;
    let config = model_config(a.model, a.seed, file)?;
    let train_pct = pick(a.train_pct, file, "train_pct")?.unwrap_or(40.0);
    let out = pick(a.out, file, "out")?.unwrap_or_else(|| PathBuf::from("ckpt"));
    let prepared = PreparedGraph::new(&graph)?;
    let (train_nodes, test_nodes) = stratified_split(&prepared.labels, train_pct, config.seed)?;
    let monitor = config.patience.map(|_| &test_nodes[..]);
    let outcome = train(&prepared, &train_nodes, &config, monitor)?;
    let params = match (&outcome.best, config.patience) {
        (Some((_, best)), Some(_)) => best.clone(),
        _ => outcome.params.clone(),
    };
    let meta = CheckpointMeta {
        config: config.clone(),
        seed: config.seed,
        n_relations: graph.n_relations(),
        feature_dim: graph.feature_dim(),
        relation_names: graph.relations().iter().map(|r| r.name.clone()).collect(),
        train_pct: Some(train_pct),
        param_names: params.to_named().into_iter().map(|(n, _)| n).collect(),
    };
    save_checkpoint(&out, &meta, &params, &outcome.losses)?;
    let report = evaluate(&params, &prepared, config.variant, &test_nodes)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    info!("checkpoint written to {}", out.display());
    Ok(Outcome::Ok)
}

fn eval_cmd(a: EvalArgs, file: &FileConfig) -> Result<Outcome> {
    let graph = load_graph(a.graph, file)?;
    let Some(ckpt) = pick(a.ckpt, file, "ckpt")? else {
        bail!("--ckpt is required");
    };
    let (meta, params) =
        load_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    if meta.n_relations != graph.n_relations() || meta.feature_dim != graph.feature_dim() {
        bail!(
            "checkpoint expects {} relations and {} features, graph has {} and {}",
            meta.n_relations,
            meta.feature_dim,
            graph.n_relations(),
            graph.feature_dim()
        );
    }
    let names: Vec<&str> = graph.relations().iter().map(|r| r.name.as_str()).collect();
    if !meta.relation_names.is_empty() && meta.relation_names != names {
        bail!(
            "checkpoint was trained on relations {:?}, graph has {:?}",
            meta.relation_names,
            names
        );
    }
    let prepared = PreparedGraph::new(&graph)?;
    let nodes = match meta.train_pct {
        Some(pct) => stratified_split(&prepared.labels, pct, meta.seed)?.1,
        None => (0..prepared.n()).filter(|&i| prepared.labels[i].is_some()).collect(),
    };
    let report = evaluate(&params, &prepared, meta.config.variant, &nodes)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome::Ok)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} {t:?}: {e}")))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        bail!("empty {what} list");
    }
    Ok(items)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn experiment(a: ExperimentArgs, file: &FileConfig) -> Result<Outcome> {
    let graph = PreparedGraph::new(&load_graph(a.graph, file)?)?;
    let model = model_config(a.model, None, file)?;
    let pcts = pick(a.train_pcts, file, "train_pcts")?.unwrap_or_else(|| "10,20,30,40".into());
    let variants = pick(a.variants, file, "variants")?.unwrap_or_else(|| "full,pr,pa".into());
    let n_seeds = pick(a.seeds, file, "seeds")?.unwrap_or(5);
    if n_seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let out = pick(a.out, file, "out")?.unwrap_or_else(|| PathBuf::from("results.csv"));
    let spec = ExperimentSpec {
        variants: parse_list(&variants, "variant")?,
        train_pcts: parse_list(&pcts, "train_pct")?,
        seeds: (0..n_seeds).collect(),
        timing: !(a.no_timing || pick(None, file, "no_timing")?.unwrap_or(false)),
        track_best: a.best_epoch || pick(None, file, "best_epoch")?.unwrap_or(false),
        ..ExperimentSpec::new(model)
    };
    ensure_parent(&out)?;
    let rows = run_experiment(&graph, &spec)?;
    write_results(&rows, &out)?;
    let summary_path = sibling(&out, "summary.csv");
    write_summary(&summarize(&rows), &summary_path)?;
    if spec.track_best {
        write_best(&rows, &sibling(&out, "best_epoch.csv"))?;
    }
    info!("{} runs -> {}, {}", rows.len(), out.display(), summary_path.display());
    Ok(Outcome::Ok)
}

fn sweep(a: SweepArgs, file: &FileConfig) -> Result<Outcome> {
    let graph = PreparedGraph::new(&load_graph(a.graph, file)?)?;
    let model = model_config(a.model, None, file)?;
    let layers = pick(a.gcn_layer_grid, file, "gcn_layer_grid")?.unwrap_or_else(|| "1,2,3".into());
    let dims = pick(a.embed_dim_grid, file, "embed_dim_grid")?.unwrap_or_else(|| "16,32,64,128".into());
    let n_seeds = pick(a.seeds, file, "seeds")?.unwrap_or(1);
    let pct = pick(a.train_pct, file, "train_pct")?.unwrap_or(40.0);
    let out = pick(a.out, file, "out")?.unwrap_or_else(|| PathBuf::from("sweep.csv"));
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let rows = run_sweep(
        &graph,
        &model,
        &parse_list(&layers, "gcn_layers")?,
        &parse_list(&dims, "embed_dim")?,
        &seeds,
        pct,
    )?;
    ensure_parent(&out)?;
    write_sweep(&rows, &out)?;
    info!("{} sweep rows -> {}", rows.len(), out.display());
    Ok(Outcome::Ok)
}

fn gradcheck_cmd(a: GradcheckArgs, file: &FileConfig) -> Result<Outcome> {
    let mut opts = GradcheckOptions::default();
    opts.config.variant = pick(a.variant, file, "variant")?.unwrap_or(Variant::Full);
    opts.seed = pick(a.seed, file, "seed")?.unwrap_or(opts.seed);
    let report = gradcheck(&opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passed {
        Ok(Outcome::Ok)
    } else {
        eprintln!(
            "gradient check failed: max relative error {:.3e} at {}[{}]",
            report.max_rel_error, report.worst.0, report.worst.1
        );
        Ok(Outcome::GradcheckFailed)
    }
}

/// Command-line value if given, else the config-file value.
fn pick<T: serde::de::DeserializeOwned>(cli: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>> {
    match cli {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}
