//! Training checkpoints: `weights.bin`, `meta.json` and `loss_trajectory.csv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::weights::{load_weights, save_weights};
use crate::error::Result;

use super::config::ModelConfig;
use super::params::ModelParams;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const META_FILE: &str = "meta.json";
pub const LOSS_FILE: &str = "loss_trajectory.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub n_relations: usize,
    pub feature_dim: usize,
    pub relation_names: Vec<String>,
    pub train_pct: Option<f64>,
    pub param_names: Vec<String>,
}

pub fn save_checkpoint(
    dir: &Path,
    meta: &CheckpointMeta,
    params: &ModelParams,
    losses: &[f64],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_weights(&dir.join(WEIGHTS_FILE), &params.to_named())?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join(LOSS_FILE))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:?}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointMeta, ModelParams)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let named = load_weights(&dir.join(WEIGHTS_FILE))?;
    let params = ModelParams::from_named(&meta.config, meta.n_relations, meta.feature_dim, named)?;
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let config = ModelConfig { embed_dim: 8, gat_heads: 2, ..Default::default() };
        let params = ModelParams::init(&config, 2, 3).unwrap();
        let meta = CheckpointMeta {
            seed: config.seed,
            config,
            n_relations: 2,
            feature_dim: 3,
            relation_names: vec!["a".into(), "b".into()],
            train_pct: Some(20.0),
            param_names: params.named().into_iter().map(|(n, _)| n).collect(),
        };
        let tmp = tempfile::tempdir().unwrap();
        save_checkpoint(tmp.path(), &meta, &params, &[0.7, 0.5]).unwrap();
        let (m, p) = load_checkpoint(tmp.path()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(p, params);
        let losses = fs::read_to_string(tmp.path().join(LOSS_FILE)).unwrap();
        assert_eq!(losses, "step,loss\n1,0.7\n2,0.5\n");
    }
}
