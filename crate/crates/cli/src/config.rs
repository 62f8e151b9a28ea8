use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

/// Keys accepted in a config file. Dashes and underscores are equivalent.
const KNOWN_KEYS: &[&str] = &[
    "anomaly_frac",
    "batch_size",
    "best_epoch",
    "camouflage_rate",
    "ckpt",
    "embed_dim",
    "embed_dim_grid",
    "entity_cap",
    "epochs",
    "feature_dim",
    "feature_shift",
    "gat_heads",
    "gcn_layer_grid",
    "gcn_layers",
    "graph",
    "hop_count",
    "lambda",
    "lr",
    "max_neighbors",
    "n_relations",
    "n_users",
    "no_timing",
    "out",
    "patience",
    "seed",
    "seeds",
    "train_pct",
    "train_pcts",
    "variant",
    "variants",
];

/// Flat `key = value` defaults read from a TOML file.
#[derive(Debug, Default)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse()?;
        let mut table = toml::Table::new();
        for (k, v) in raw {
            let key = k.replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown config key {k:?}");
            }
            table.insert(key, v);
        }
        Ok(Self { table })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => {
                // Lists may be written as TOML arrays; the commands take them
                // as comma-separated strings.
                let v = match v {
                    toml::Value::Array(items) => toml::Value::String(
                        items
                            .iter()
                            .map(|i| match i {
                                toml::Value::String(s) => s.clone(),
                                other => other.to_string(),
                            })
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                    other => other.clone(),
                };
                v.try_into()
                    .map(Some)
                    .with_context(|| format!("config key {key:?} has the wrong type"))
            }
        }
    }
}
