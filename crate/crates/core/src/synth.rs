//! Synthetic multi-relation social graphs with planted anomalous users.
//!
//! Anomalous users are organized into campaigns. In every relation each
//! campaign owns a few private entities its members attach to, which turns
//! into dense anomalous-anomalous co-occurrence after projection. A
//! `camouflage_rate` share of each anomalous user's attachments instead
//! goes to entities drawn from the benign popularity distribution, mixing
//! them into benign neighborhoods. Benign users attach to entities by a
//! heavy-tailed Zipf draw. Entity degrees never exceed `max_entity_degree`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::autodiff::{SplitMix64, Tensor};
use crate::error::{Error, Result};
use crate::graph::io::{write_incidence, write_nodes};
use crate::graph::{
    build_relation_graph_capped, IncidenceMatrix, MultiRelationGraph, Relation,
};

/// Exponent of the entity popularity distribution.
pub const ZIPF_EXPONENT: f64 = 1.1;

const RELATION_NAMES: [&str; 4] = ["follow", "comment", "post", "hashtag"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub anomaly_fraction: f64,
    pub n_relations: usize,
    pub feature_dim: usize,
    /// Per-dimension mean of anomalous features (benign mean is 0).
    pub feature_shift: f64,
    /// Share of an anomalous user's attachments aimed at benign entities.
    pub camouflage_rate: f64,
    /// Entities in each relation, campaign entities included.
    pub entities_per_relation: usize,
    /// Entity attachments per user per relation.
    pub attachments_per_user: usize,
    /// Anomalous users per campaign.
    pub campaign_size: usize,
    /// Private entities per campaign per relation.
    pub campaign_entities: usize,
    pub max_entity_degree: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            anomaly_fraction: 0.2,
            n_relations: 3,
            feature_dim: 16,
            feature_shift: 0.5,
            camouflage_rate: 0.5,
            entities_per_relation: 800,
            attachments_per_user: 3,
            campaign_size: 20,
            campaign_entities: 2,
            max_entity_degree: 40,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_anomalous(&self) -> usize {
        (self.n_users as f64 * self.anomaly_fraction).floor() as usize
    }

    pub fn n_campaigns(&self) -> usize {
        self.n_anomalous().div_ceil(self.campaign_size.max(1))
    }

    fn campaign_entity_count(&self) -> usize {
        self.n_campaigns() * self.campaign_entities
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_users == 0 {
            return fail("n_users must be positive".into());
        }
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            return fail(format!("anomaly_fraction {} not in (0, 1)", self.anomaly_fraction));
        }
        if !(0.0..=1.0).contains(&self.camouflage_rate) {
            return fail(format!("camouflage_rate {} not in [0, 1]", self.camouflage_rate));
        }
        if !self.feature_shift.is_finite() {
            return fail("feature_shift must be finite".into());
        }
        if self.n_relations == 0 || self.feature_dim == 0 {
            return fail("n_relations and feature_dim must be positive".into());
        }
        if self.entities_per_relation == 0 || self.attachments_per_user == 0 {
            return fail("entities_per_relation and attachments_per_user must be positive".into());
        }
        if self.campaign_size == 0 || self.campaign_entities == 0 {
            return fail("campaign_size and campaign_entities must be positive".into());
        }
        if self.max_entity_degree < 2 {
            return fail("max_entity_degree must be at least 2".into());
        }
        let benign_pool = self.entities_per_relation.saturating_sub(self.campaign_entity_count());
        if benign_pool == 0 {
            return fail(format!(
                "{} entities cannot hold {} campaign entities plus a benign pool",
                self.entities_per_relation,
                self.campaign_entity_count()
            ));
        }
        let demand = (self.n_users - self.n_anomalous()) * self.attachments_per_user
            + self.n_anomalous() * self.attachments_per_user;
        if demand > benign_pool * self.max_entity_degree + self.campaign_entity_count() * self.max_entity_degree {
            return fail("attachment demand exceeds total entity capacity".into());
        }
        if self.campaign_size > self.max_entity_degree {
            return fail(format!(
                "campaign_size {} exceeds max_entity_degree {}",
                self.campaign_size, self.max_entity_degree
            ));
        }
        Ok(())
    }

    pub fn relation_name(r: usize) -> String {
        RELATION_NAMES
            .get(r)
            .map_or_else(|| format!("rel{r}"), |s| s.to_string())
    }
}

/// Generated graph plus the incidence logs it was projected from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub graph: MultiRelationGraph,
    pub incidences: Vec<(String, IncidenceMatrix)>,
    /// Campaign of each anomalous user; `None` for benign users.
    pub campaign: Vec<Option<usize>>,
}

impl SynthDataset {
    /// Writes the ingest layout (`features.csv`, `labels.csv`,
    /// `incidence_<relation>.csv`).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        write_nodes(&self.graph, dir)?;
        for (name, inc) in &self.incidences {
            write_incidence(inc, self.graph.node_ids(), name, dir)?;
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let n = config.n_users;
    let n_anom = config.n_anomalous();

    let mut rng = SplitMix64::derive(config.seed, "synth-labels");
    let mut users: Vec<usize> = (0..n).collect();
    users.shuffle(&mut rng);
    let mut campaign = vec![None; n];
    for (k, &u) in users[..n_anom].iter().enumerate() {
        campaign[u] = Some(k / config.campaign_size);
    }
    let labels: Vec<Option<bool>> = campaign.iter().map(|c| Some(c.is_some())).collect();

    let mut rng = SplitMix64::derive(config.seed, "synth-features");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(n * config.feature_dim);
    for c in &campaign {
        let mean = if c.is_some() { config.feature_shift } else { 0.0 };
        for _ in 0..config.feature_dim {
            x.push(mean + noise.sample(&mut rng));
        }
    }
    let features = Tensor::from_vec(n, config.feature_dim, x)?;

    let n_campaign_entities = config.campaign_entity_count();
    let benign_pool = config.entities_per_relation - n_campaign_entities;
    let zipf = Zipf::new(benign_pool as f64, ZIPF_EXPONENT)
        .map_err(|e| Error::Config(format!("zipf: {e}")))?;

    let mut relations = Vec::with_capacity(config.n_relations);
    let mut incidences = Vec::with_capacity(config.n_relations);
    for r in 0..config.n_relations {
        let name = SynthConfig::relation_name(r);
        let mut rng = SplitMix64::derive(config.seed, &format!("synth-relation-{r}"));
        // Entity ranks are shuffled so popularity is not tied to the index.
        let mut popularity: Vec<usize> = (0..benign_pool).collect();
        popularity.shuffle(&mut rng);
        let mut degree = vec![0usize; config.entities_per_relation];
        let mut entries = Vec::with_capacity(n * config.attachments_per_user);

        let draw_benign = |rng: &mut SplitMix64, degree: &mut [usize], taken: &[usize]| {
            for _ in 0..64 {
                let rank = zipf.sample(rng) as usize - 1;
                let e = popularity[rank.min(benign_pool - 1)];
                if degree[e] < config.max_entity_degree && !taken.contains(&e) {
                    return Some(e);
                }
            }
            // Fall back to the least-loaded free entity.
            (0..benign_pool)
                .filter(|e| !taken.contains(e))
                .min_by_key(|&e| (degree[e], e))
                .filter(|&e| degree[e] < config.max_entity_degree)
        };

        for u in 0..n {
            let mut taken: Vec<usize> = Vec::with_capacity(config.attachments_per_user);
            for _ in 0..config.attachments_per_user {
                let e = match campaign[u] {
                    Some(c) if rng.next_f64() >= config.camouflage_rate => {
                        let base = benign_pool + c * config.campaign_entities;
                        Some(base + rng.below(config.campaign_entities))
                    }
                    _ => draw_benign(&mut rng, &mut degree, &taken),
                };
                let Some(e) = e else {
                    return Err(Error::Config(
                        "entity capacity exhausted; raise entities_per_relation".into(),
                    ));
                };
                if !taken.contains(&e) {
                    taken.push(e);
                    degree[e] += 1;
                    entries.push((u, e));
                }
            }
        }
        let inc = IncidenceMatrix::new(n, config.entities_per_relation, entries)?;
        let proj = build_relation_graph_capped(&inc, config.max_entity_degree);
        debug_assert!(proj.dropped_entities.is_empty());
        relations.push(Relation {
            name: name.clone(),
            adjacency: proj.adjacency,
        });
        incidences.push((name, inc));
    }

    let node_ids = (0..n).map(|i| format!("u{i}")).collect();
    let graph = MultiRelationGraph::with_node_ids(relations, features, labels, node_ids)?;
    Ok(SynthDataset {
        graph,
        incidences,
        campaign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 300,
            entities_per_relation: 200,
            ..Default::default()
        }
    }

    #[test]
    fn exact_anomaly_count() {
        let c = SynthConfig {
            n_users: 500,
            ..small()
        };
        let d = generate(&c).unwrap();
        let pos = d.graph.labels().iter().filter(|l| **l == Some(true)).count();
        assert_eq!(pos, 100);
    }

    #[test]
    fn same_seed_same_graph() {
        let c = small();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = generate(&SynthConfig { seed: 9, ..c }).unwrap();
        assert_ne!(other.graph, generate(&small()).unwrap().graph);
    }

    #[test]
    fn no_camouflage_means_no_cross_edges() {
        let c = SynthConfig {
            camouflage_rate: 0.0,
            ..small()
        };
        let d = generate(&c).unwrap();
        let labels = d.graph.labels();
        for rel in d.graph.relations() {
            let csr = rel.adjacency.csr();
            for i in 0..csr.n() {
                for (j, _) in csr.row(i) {
                    assert_eq!(labels[i], labels[j], "cross edge {i}-{j} in {}", rel.name);
                }
            }
        }
    }

    #[test]
    fn respects_degree_cap() {
        let c = SynthConfig {
            max_entity_degree: 12,
            campaign_size: 10,
            entities_per_relation: 300,
            ..small()
        };
        let d = generate(&c).unwrap();
        for (_, inc) in &d.incidences {
            assert!(inc.entity_degrees().iter().all(|&k| k <= 12));
        }
    }

    #[test]
    fn rejects_infeasible() {
        let bad = [
            SynthConfig { entities_per_relation: 0, ..small() },
            SynthConfig { anomaly_fraction: 1.0, ..small() },
            SynthConfig { camouflage_rate: 1.5, ..small() },
            SynthConfig { entities_per_relation: 10, ..small() },
        ];
        for c in bad {
            assert!(generate(&c).is_err(), "{c:?}");
        }
    }
}
