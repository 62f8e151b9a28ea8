use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Per-relation GCN stacks, fusion, attention, aggregator, discriminator.
    Full,
    /// No GCN stacks: raw features propagated once per relation and summed.
    Pr,
    /// No final aggregator: the attention output is the embedding.
    Pa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Pr, Variant::Pa];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Pr => "pr",
            Variant::Pa => "pa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "pr" => Ok(Variant::Pr),
            "pa" => Ok(Variant::Pa),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Attention layers in the pipeline; fixed at one.
pub const GAT_LAYERS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// GCN layers per relation.
    pub gcn_layers: usize,
    pub gat_heads: usize,
    /// Embedding width `d′` shared by the GCN, attention and aggregator outputs.
    pub embed_dim: usize,
    pub lr: f64,
    /// Weight of the squared L2 penalty on all parameters.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// BFS depth for batch subgraphs; `None` covers the receptive field.
    pub hop_count: Option<usize>,
    /// Per-node neighbor cap during batch expansion; `None` keeps every neighbor.
    pub max_neighbors: Option<usize>,
    /// Stop after this many epochs without improvement on the monitored split.
    pub patience: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            gcn_layers: 2,
            gat_heads: 4,
            embed_dim: 64,
            lr: 0.005,
            lambda: 0.001,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            hop_count: None,
            max_neighbors: None,
            patience: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.gat_heads == 0 || self.embed_dim == 0 {
            return fail("gat_heads and embed_dim must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.gat_heads) {
            return fail(format!(
                "embed_dim {} is not divisible by gat_heads {}",
                self.embed_dim, self.gat_heads
            ));
        }
        if self.variant != Variant::Pr && self.gcn_layers == 0 {
            return fail("gcn_layers must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.hop_count == Some(0) {
            return fail("hop_count must be at least 1".into());
        }
        if self.max_neighbors == Some(0) {
            return fail("max_neighbors must be at least 1".into());
        }
        Ok(())
    }

    /// Propagation depth of the configured variant: every node whose
    /// features can reach an output lies within this many hops.
    pub fn receptive_field(&self) -> usize {
        let propagation = match self.variant {
            Variant::Pr => 1,
            _ => self.gcn_layers,
        };
        let aggregator = usize::from(self.variant != Variant::Pa);
        propagation + GAT_LAYERS + aggregator
    }

    /// Batch expansion depth. The default is `gcn_layers + attention layers + 1`.
    pub fn hops(&self) -> usize {
        self.hop_count.unwrap_or(self.gcn_layers + GAT_LAYERS + 1)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.gat_heads
    }
}
