use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "weights sum to one".
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "intra-level")]
    IntraLevel,
    #[serde(rename = "inter-level")]
    InterLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyEdge {
    pub from: String,
    pub to: String,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub registry_hash: String,
    pub dataset_size: usize,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
}

/// Raw synergy observations, aggregated over programs.
///
/// Aggregation is plain addition, so the order programs are processed in
/// does not matter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynergyCounts {
    pub pairs: BTreeMap<String, BTreeMap<String, PairCount>>,
    /// Number of recorded edges each pass initiated.
    pub initiators: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub edge_type: EdgeType,
    pub count: u64,
}

impl SynergyCounts {
    pub fn record(&mut self, from: &str, to: &str, edge_type: EdgeType) {
        let slot = self
            .pairs
            .entry(from.to_string())
            .or_default()
            .entry(to.to_string())
            .or_insert(PairCount { edge_type, count: 0 });
        slot.count += 1;
        *self.initiators.entry(from.to_string()).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &SynergyCounts) {
        for (from, row) in &other.pairs {
            for (to, pc) in row {
                let slot = self
                    .pairs
                    .entry(from.clone())
                    .or_default()
                    .entry(to.clone())
                    .or_insert(PairCount {
                        edge_type: pc.edge_type,
                        count: 0,
                    });
                slot.count += pc.count;
            }
        }
        for (p, n) in &other.initiators {
            *self.initiators.entry(p.clone()).or_insert(0) += n;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Weighted directed graph of synergistic pass pairs with a start-pass
/// distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynergyGraph {
    nodes: BTreeSet<String>,
    edges: Vec<SynergyEdge>,
    /// Offsets into `edges` per source node; edges are sorted by (from, to).
    out: BTreeMap<String, (usize, usize)>,
    start_weights: BTreeMap<String, f64>,
    meta: GraphMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<SynergyEdge>,
    start_weights: BTreeMap<String, f64>,
    #[serde(default)]
    meta: GraphMeta,
}

impl SynergyGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds and checks a graph from explicit parts.
    pub fn from_parts(
        edges: Vec<SynergyEdge>,
        start_weights: BTreeMap<String, f64>,
        meta: GraphMeta,
    ) -> Result<Self, GraphError> {
        let nodes = edges
            .iter()
            .flat_map(|e| [e.from.clone(), e.to.clone()])
            .chain(start_weights.keys().cloned())
            .collect();
        Self::assemble(nodes, edges, start_weights, meta)
    }

    fn assemble(
        nodes: BTreeSet<String>,
        mut edges: Vec<SynergyEdge>,
        start_weights: BTreeMap<String, f64>,
        meta: GraphMeta,
    ) -> Result<Self, GraphError> {
        edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        let mut out = BTreeMap::new();
        let mut i = 0;
        while i < edges.len() {
            let from = edges[i].from.clone();
            let start = i;
            while i < edges.len() && edges[i].from == from {
                if i > start && edges[i].to == edges[i - 1].to {
                    return Err(GraphError::Schema(format!(
                        "duplicate edge {} -> {}",
                        from, edges[i].to
                    )));
                }
                i += 1;
            }
            out.insert(from, (start, i));
        }
        let graph = SynergyGraph {
            nodes,
            edges,
            out,
            start_weights,
            meta,
        };
        graph.check_invariants()?;
        Ok(graph)
    }

    /// Normalizes counts: outgoing weights per node and start weights each
    /// sum to one.
    pub fn from_counts(counts: &SynergyCounts, meta: GraphMeta) -> Self {
        let mut edges = Vec::new();
        for (from, row) in &counts.pairs {
            let total: u64 = row.values().map(|pc| pc.count).sum();
            for (to, pc) in row {
                edges.push(SynergyEdge {
                    from: from.clone(),
                    to: to.clone(),
                    edge_type: pc.edge_type,
                    weight: pc.count as f64 / total as f64,
                });
            }
        }
        let total: u64 = counts.initiators.values().sum();
        let start_weights = counts
            .initiators
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(p, n)| (p.clone(), *n as f64 / total as f64))
            .collect();
        Self::from_parts(edges, start_weights, meta).expect("normalized counts satisfy invariants")
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[SynergyEdge] {
        &self.edges
    }

    pub fn start_weights(&self) -> &BTreeMap<String, f64> {
        &self.start_weights
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.start_weights.is_empty()
    }

    /// Outgoing edges of `pass`, sorted by target name.
    pub fn successors(&self, pass: &str) -> &[SynergyEdge] {
        match self.out.get(pass) {
            Some(&(a, b)) => &self.edges[a..b],
            None => &[],
        }
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&SynergyEdge> {
        self.successors(from).iter().find(|e| e.to == to)
    }

    pub fn check_invariants(&self) -> Result<(), GraphError> {
        let bad_weight = |w: f64| !(0.0..=1.0).contains(&w) || w.is_nan();
        for e in &self.edges {
            if bad_weight(e.weight) {
                return Err(GraphError::Schema(format!(
                    "edge {} -> {} has weight {} outside [0, 1]",
                    e.from, e.to, e.weight
                )));
            }
            if !self.nodes.contains(&e.from) || !self.nodes.contains(&e.to) {
                return Err(GraphError::Schema(format!(
                    "edge {} -> {} references an undeclared node",
                    e.from, e.to
                )));
            }
        }
        for (from, &(a, b)) in &self.out {
            let sum: f64 = self.edges[a..b].iter().map(|e| e.weight).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(GraphError::Schema(format!(
                    "outgoing weights of `{from}` sum to {sum}, expected 1"
                )));
            }
        }
        for (p, w) in &self.start_weights {
            if bad_weight(*w) {
                return Err(GraphError::Schema(format!("start weight of `{p}` is {w}")));
            }
            if !self.nodes.contains(p) {
                return Err(GraphError::Schema(format!("start pass `{p}` is not a node")));
            }
        }
        if !self.start_weights.is_empty() {
            let sum: f64 = self.start_weights.values().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(GraphError::Schema(format!("start weights sum to {sum}, expected 1")));
            }
        } else if !self.edges.is_empty() {
            return Err(GraphError::Schema("graph has edges but no start weights".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self.nodes.iter().cloned().collect(),
            edges: self.edges.clone(),
            start_weights: self.start_weights.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Schema(e.to_string()))?;
        let nodes: BTreeSet<String> = file.nodes.into_iter().collect();
        Self::assemble(nodes, file.edges, file.start_weights, file.meta)
    }

    pub fn save(&self, sink: &Path) -> Result<(), GraphError> {
        fs::write(sink, self.to_json()).map_err(|source| GraphError::Io {
            path: sink.display().to_string(),
            source,
        })
    }

    pub fn load(source: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(source).map_err(|e| GraphError::Io {
            path: source.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}
