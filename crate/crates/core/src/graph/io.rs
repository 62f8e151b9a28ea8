//! Dataset directory ingest and the binary graph cache.
//!
//! A dataset directory holds `features.csv` (`node_id,f0..f{d-1}`),
//! `labels.csv` (`node_id,label`, label 0, 1 or empty) and, per relation,
//! either `incidence_<name>.csv` (`node_id,entity_id`) or
//! `edges_<name>.csv` (`src,dst`). Node ids map to dense indices in the
//! order they appear in `features.csv`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;

use super::{
    build_relation_graph_capped, IncidenceMatrix, MultiRelationGraph, Relation, SparseAdjacency,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const GRAPH_MAGIC: &[u8; 4] = b"RAUG";
const GRAPH_VERSION: u32 = 1;

fn parse_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(parse_err(
            path,
            format!("expected header starting with {expected:?}, found {got:?}"),
        ));
    }
    Ok(())
}

/// Relation files found in a dataset directory, sorted by relation name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationSource {
    Incidence { name: String, path: PathBuf },
    Edges { name: String, path: PathBuf },
}

impl RelationSource {
    pub fn name(&self) -> &str {
        match self {
            Self::Incidence { name, .. } | Self::Edges { name, .. } => name,
        }
    }
}

pub fn discover_relations(dir: &Path) -> Result<Vec<RelationSource>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else {
            continue;
        };
        let Some(stem) = file.strip_suffix(".csv") else {
            continue;
        };
        if let Some(name) = stem.strip_prefix("incidence_") {
            found.push(RelationSource::Incidence {
                name: name.to_string(),
                path: path.clone(),
            });
        } else if let Some(name) = stem.strip_prefix("edges_") {
            found.push(RelationSource::Edges {
                name: name.to_string(),
                path: path.clone(),
            });
        }
    }
    found.sort_by(|a, b| a.name().cmp(b.name()));
    if let Some(w) = found.windows(2).find(|w| w[0].name() == w[1].name()) {
        return Err(Error::Graph(format!(
            "relation '{}' has both incidence and edge files",
            w[0].name()
        )));
    }
    Ok(found)
}

/// Reads a dataset directory. Entities linked to more than
/// `entity_degree_cap` users are dropped from their projection.
pub fn load_dir(dir: &Path, entity_degree_cap: usize) -> Result<MultiRelationGraph> {
    let feat_path = dir.join("features.csv");
    let mut rdr = reader(&feat_path)?;
    check_header(&feat_path, &mut rdr, &["node_id"])?;
    let d = rdr.headers()?.len() - 1;
    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 1 {
            return Err(parse_err(&feat_path, format!("row {} has {} fields", line + 2, rec.len())));
        }
        let id = rec[0].to_string();
        if index.insert(id.clone(), node_ids.len()).is_some() {
            return Err(parse_err(&feat_path, format!("duplicate node id '{id}'")));
        }
        node_ids.push(id);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(&feat_path, format!("bad feature value '{field}'")))?;
            values.push(v);
        }
    }
    let n = node_ids.len();
    if n == 0 {
        return Err(parse_err(&feat_path, "no nodes"));
    }
    let features = Tensor::from_vec(n, d, values)?;

    let mut labels = vec![None; n];
    let label_path = dir.join("labels.csv");
    if label_path.exists() {
        let mut rdr = reader(&label_path)?;
        check_header(&label_path, &mut rdr, &["node_id", "label"])?;
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default();
            let &i = index
                .get(id)
                .ok_or_else(|| parse_err(&label_path, format!("unknown node id '{id}'")))?;
            labels[i] = match rec.get(1).unwrap_or_default() {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(parse_err(&label_path, format!("bad label '{other}'"))),
            };
        }
    }

    let sources = discover_relations(dir)?;
    if sources.is_empty() {
        return Err(Error::Graph(format!(
            "no incidence_*.csv or edges_*.csv files in {}",
            dir.display()
        )));
    }
    let mut relations = Vec::with_capacity(sources.len());
    for src in sources {
        let adjacency = match &src {
            RelationSource::Incidence { path, .. } => {
                let inc = read_incidence(path, &index)?;
                let proj = build_relation_graph_capped(&inc, entity_degree_cap);
                if !proj.dropped_entities.is_empty() {
                    info!(
                        "relation '{}': {} entities over the degree cap were dropped",
                        src.name(),
                        proj.dropped_entities.len()
                    );
                }
                proj.adjacency
            }
            RelationSource::Edges { path, .. } => read_edges(path, &index)?,
        };
        relations.push(Relation {
            name: src.name().to_string(),
            adjacency,
        });
    }
    MultiRelationGraph::with_node_ids(relations, features, labels, node_ids)
}

fn read_incidence(path: &Path, index: &HashMap<String, usize>) -> Result<IncidenceMatrix> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["node_id", "entity_id"])?;
    let mut entities: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (Some(u), Some(e)) = (rec.get(0), rec.get(1)) else {
            return Err(parse_err(path, "short row"));
        };
        let &ui = index
            .get(u)
            .ok_or_else(|| parse_err(path, format!("unknown node id '{u}'")))?;
        let next = entities.len();
        let ei = *entities.entry(e.to_string()).or_insert(next);
        entries.push((ui, ei));
    }
    IncidenceMatrix::new(index.len(), entities.len(), entries)
}

fn read_edges(path: &Path, index: &HashMap<String, usize>) -> Result<SparseAdjacency> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["src", "dst"])?;
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let lookup = |k: usize| -> Result<usize> {
            let id = rec.get(k).unwrap_or_default();
            index
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(path, format!("unknown node id '{id}'")))
        };
        let (a, b) = (lookup(0)?, lookup(1)?);
        let w = match rec.get(2) {
            Some(s) if !s.is_empty() => s
                .parse::<f64>()
                .map_err(|_| parse_err(path, format!("bad weight '{s}'")))?,
            _ => 1.0,
        };
        if !(w >= 0.0 && w.is_finite()) {
            return Err(parse_err(path, format!("bad weight {w}")));
        }
        edges.push((a, b, w));
    }
    SparseAdjacency::from_undirected_edges(index.len(), &edges)
}

/// Writes `node_id,index` for every node.
pub fn write_node_index(graph: &MultiRelationGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_id", "index"])?;
    for (i, id) in graph.node_ids().iter().enumerate() {
        w.write_record([id.as_str(), &i.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `features.csv` and `labels.csv` for `graph`. Relation files are
/// the caller's responsibility.
pub fn write_nodes(graph: &MultiRelationGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
    let mut header = vec!["node_id".to_string()];
    header.extend((0..graph.feature_dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (i, id) in graph.node_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        // `{:?}` prints the shortest string that round-trips exactly.
        rec.extend(graph.features().row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["node_id", "label"])?;
    for (id, label) in graph.node_ids().iter().zip(graph.labels()) {
        let l = match label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([id.as_str(), l])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `incidence_<name>.csv` with entity ids `e<index>`.
pub fn write_incidence(
    inc: &IncidenceMatrix,
    node_ids: &[String],
    name: &str,
    dir: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("incidence_{name}.csv")))?;
    w.write_record(["node_id", "entity_id"])?;
    for &(u, e) in inc.entries() {
        w.write_record([node_ids[u].as_str(), &format!("e{e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `edges_<name>.csv` listing each undirected edge once with its weight.
pub fn write_edges(adj: &SparseAdjacency, node_ids: &[String], name: &str, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("edges_{name}.csv")))?;
    w.write_record(["src", "dst", "weight"])?;
    for i in 0..adj.n() {
        for (j, v) in adj.csr().row(i) {
            if i < j {
                w.write_record([node_ids[i].as_str(), node_ids[j].as_str(), &format!("{v:?}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Graph(format!("bad utf-8 in graph cache: {e}")))
}

/// Binary cache: `RAUG`, version, node ids, features, labels and each
/// relation's upper-triangle edges, all little-endian.
pub fn save_bin(graph: &MultiRelationGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRAPH_MAGIC)?;
    put_u32(&mut w, GRAPH_VERSION)?;
    put_u64(&mut w, graph.n() as u64)?;
    put_u64(&mut w, graph.feature_dim() as u64)?;
    for id in graph.node_ids() {
        put_str(&mut w, id)?;
    }
    for v in graph.features().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in graph.labels() {
        let b: u8 = match l {
            Some(false) => 0,
            Some(true) => 1,
            None => 255,
        };
        w.write_all(&[b])?;
    }
    put_u32(&mut w, graph.n_relations() as u32)?;
    for rel in graph.relations() {
        put_str(&mut w, &rel.name)?;
        let c = rel.adjacency.csr();
        put_u64(&mut w, rel.adjacency.edge_count() as u64)?;
        for i in 0..c.n() {
            for (j, v) in c.row(i).filter(|&(j, _)| j > i) {
                put_u64(&mut w, i as u64)?;
                put_u64(&mut w, j as u64)?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_bin(path: &Path) -> Result<MultiRelationGraph> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(parse_err(path, "not a graph cache (bad magic)"));
    }
    let version = get_u32(&mut r)?;
    if version != GRAPH_VERSION {
        return Err(parse_err(path, format!("unsupported graph cache version {version}")));
    }
    let n = get_u64(&mut r)? as usize;
    let d = get_u64(&mut r)? as usize;
    let node_ids = (0..n).map(|_| get_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let values = (0..n * d).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let features = Tensor::from_vec(n, d, values)?;
    let mut raw_labels = vec![0u8; n];
    r.read_exact(&mut raw_labels)?;
    let labels = raw_labels
        .into_iter()
        .map(|b| match b {
            0 => Ok(Some(false)),
            1 => Ok(Some(true)),
            255 => Ok(None),
            other => Err(parse_err(path, format!("bad label byte {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let r_count = get_u32(&mut r)? as usize;
    let mut relations = Vec::with_capacity(r_count);
    for _ in 0..r_count {
        let name = get_str(&mut r)?;
        let m = get_u64(&mut r)? as usize;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let i = get_u64(&mut r)? as usize;
            let j = get_u64(&mut r)? as usize;
            let v = get_f64(&mut r)?;
            edges.push((i, j, v));
        }
        relations.push(Relation {
            name,
            adjacency: SparseAdjacency::from_undirected_edges(n, &edges)?,
        });
    }
    MultiRelationGraph::with_node_ids(relations, features, labels, node_ids)
}

/// Loads a graph from either a dataset directory or a binary cache file.
pub fn load_any(path: &Path, entity_degree_cap: usize) -> Result<MultiRelationGraph> {
    if path.is_dir() {
        load_dir(path, entity_degree_cap)
    } else {
        load_bin(path)
    }
}
