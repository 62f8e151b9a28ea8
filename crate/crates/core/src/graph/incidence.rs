use log::warn;

use super::csr::SparseAdjacency;
use crate::error::{Error, Result};

/// Default cap on how many users a single entity may link before it is
/// dropped from the projection.
pub const DEFAULT_ENTITY_DEGREE_CAP: usize = 1000;

/// Binary user-entity occurrence matrix for one relation type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    n_users: usize,
    n_entities: usize,
    /// Sorted by (user, entity), no duplicates.
    entries: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    /// Repeated `(user, entity)` pairs collapse to one occurrence.
    pub fn new(n_users: usize, n_entities: usize, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(u, e)) = entries
            .iter()
            .find(|(u, e)| *u >= n_users || *e >= n_entities)
        {
            return Err(Error::Graph(format!(
                "incidence ({u}, {e}) outside {n_users} users x {n_entities} entities"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self {
            n_users,
            n_entities,
            entries,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Users attached to each entity, ascending.
    pub fn users_by_entity(&self) -> Vec<Vec<usize>> {
        let mut by_entity = vec![Vec::new(); self.n_entities];
        for &(u, e) in &self.entries {
            by_entity[e].push(u);
        }
        by_entity
    }

    pub fn entity_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_entities];
        for &(_, e) in &self.entries {
            deg[e] += 1;
        }
        deg
    }
}

/// Outcome of a capped projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub adjacency: SparseAdjacency,
    /// Entities skipped for exceeding the degree cap, with their degree.
    pub dropped_entities: Vec<(usize, usize)>,
}

/// User-user co-occurrence graph `W·Wᵀ` with the diagonal removed: entry
/// `(i, j)` counts the entities users `i` and `j` share.
pub fn build_relation_graph(inc: &IncidenceMatrix) -> SparseAdjacency {
    build_relation_graph_capped(inc, usize::MAX).adjacency
}

/// As [`build_relation_graph`], but entities linked to more than `cap`
/// users are left out and reported.
pub fn build_relation_graph_capped(inc: &IncidenceMatrix, cap: usize) -> Projection {
    let mut trip = Vec::new();
    let mut dropped_entities = Vec::new();
    for (entity, users) in inc.users_by_entity().into_iter().enumerate() {
        if users.len() > cap {
            dropped_entities.push((entity, users.len()));
            continue;
        }
        for (a, &u) in users.iter().enumerate() {
            for &v in &users[a + 1..] {
                trip.push((u, v, 1.0));
                trip.push((v, u, 1.0));
            }
        }
    }
    if !dropped_entities.is_empty() {
        warn!(
            "dropped {} entities above the degree cap of {cap}: {:?}",
            dropped_entities.len(),
            &dropped_entities[..dropped_entities.len().min(10)]
        );
    }
    let adjacency = SparseAdjacency::from_triplets(inc.n_users(), trip)
        .expect("co-occurrence counts form a symmetric adjacency");
    Projection {
        adjacency,
        dropped_entities,
    }
}
