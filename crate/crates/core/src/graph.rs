//! Concept graphs underlying the hierarchical indices.
//!
//! Three flavors over the same node set (non-obsolete concepts):
//!
//! - `osi`: one weight-1.0 edge per in-scope parent-child pair.
//! - `ssi`: for each concept, edges to its nearest neighbor concepts by
//!   preferred-name embedding similarity; edge weight is the similarity,
//!   reciprocal duplicates keep the max.
//! - `ossi`: union of both; ontology edges stay at 1.0, semantic-only edges
//!   are scaled down (default 0.5 x similarity) so curated structure
//!   dominates while semantic proximity still connects related branches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::embedding::EmbeddingStore;
use crate::ontology::{ConceptId, Ontology};
use crate::par::map_ordered;

/// Which edge sources feed the concept graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    Osi,
    Ssi,
    Ossi,
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexKind::Osi => "osi",
            IndexKind::Ssi => "ssi",
            IndexKind::Ossi => "ossi",
        })
    }
}

impl FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "osi" => Ok(IndexKind::Osi),
            "ssi" => Ok(IndexKind::Ssi),
            "ossi" => Ok(IndexKind::Ossi),
            other => Err(format!("unknown index kind {other:?} (osi|ssi|ossi)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphConfig {
    /// Neighbors per concept for semantic edges.
    pub semantic_neighbors: usize,
    /// Scale applied to semantic-only edge weights in the hybrid graph.
    pub ossi_semantic_weight: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            semantic_neighbors: 10,
            ossi_semantic_weight: 0.5,
        }
    }
}

/// Undirected weighted graph over concepts; edges are stored once under the
/// canonically ordered node pair. No self-loops, all weights positive.
#[derive(Clone, Debug, Default)]
pub struct ConceptGraph {
    nodes: BTreeSet<ConceptId>,
    edges: BTreeMap<(ConceptId, ConceptId), f64>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph has no nodes (all concepts obsolete or ontology empty)")]
    EmptyGraph,
    #[error("store required to build semantic edges")]
    StoreRequired,
    #[error("{} concepts lack a preferred-name embedding row: {}", .concepts.len(), preview(.concepts))]
    MissingEmbedding { concepts: Vec<ConceptId> },
    #[error("edge weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("self loop on {0}")]
    SelfLoop(ConceptId),
}

fn preview(concepts: &[ConceptId]) -> String {
    let shown: Vec<String> = concepts.iter().take(5).map(|c| c.to_string()).collect();
    let mut s = shown.join(", ");
    if concepts.len() > 5 {
        s.push_str(", ...");
    }
    s
}

impl ConceptGraph {
    pub fn new(nodes: impl IntoIterator<Item = ConceptId>) -> Self {
        ConceptGraph {
            nodes: nodes.into_iter().collect(),
            edges: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> &BTreeSet<ConceptId> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ConceptId, &ConceptId, f64)> {
        self.edges.iter().map(|((a, b), &w)| (a, b, w))
    }

    pub fn weight(&self, a: &ConceptId, b: &ConceptId) -> Option<f64> {
        self.edges.get(&key(a, b)).copied()
    }

    /// Inserts an edge, replacing any existing weight.
    pub fn set_edge(&mut self, a: &ConceptId, b: &ConceptId, w: f64) -> Result<(), GraphError> {
        self.check_edge(a, b, w)?;
        self.edges.insert(key(a, b), w);
        Ok(())
    }

    /// Inserts an edge keeping the max weight if it already exists.
    pub fn merge_edge_max(
        &mut self,
        a: &ConceptId,
        b: &ConceptId,
        w: f64,
    ) -> Result<(), GraphError> {
        self.check_edge(a, b, w)?;
        let entry = self.edges.entry(key(a, b)).or_insert(w);
        if w > *entry {
            *entry = w;
        }
        Ok(())
    }

    fn check_edge(&self, a: &ConceptId, b: &ConceptId, w: f64) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a.clone()));
        }
        if !(w > 0.0) {
            return Err(GraphError::NonPositiveWeight(w));
        }
        debug_assert!(self.nodes.contains(a) && self.nodes.contains(b));
        Ok(())
    }

    /// Sorted node list plus adjacency indexed by position in that list.
    pub fn adjacency(&self) -> (Vec<ConceptId>, Vec<Vec<(usize, f64)>>) {
        let ids: Vec<ConceptId> = self.nodes.iter().cloned().collect();
        let pos: BTreeMap<&ConceptId, usize> =
            ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for ((a, b), &w) in &self.edges {
            let (ia, ib) = (pos[a], pos[b]);
            adj[ia].push((ib, w));
            adj[ib].push((ia, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(i, _)| i);
        }
        (ids, adj)
    }
}

fn key(a: &ConceptId, b: &ConceptId) -> (ConceptId, ConceptId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Builds the concept graph for an index flavor. Obsolete concepts are out
/// of scope. Semantic flavors need `store` and a preferred-name row for
/// every in-scope concept.
pub fn build_graph(
    ontology: &Ontology,
    store: Option<&EmbeddingStore>,
    kind: IndexKind,
    cfg: &GraphConfig,
) -> Result<ConceptGraph, GraphError> {
    let in_scope: Vec<&ConceptId> = ontology
        .concepts()
        .filter(|c| !c.obsolete)
        .map(|c| &c.id)
        .collect();
    if in_scope.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let mut graph = ConceptGraph::new(in_scope.iter().map(|&id| id.clone()));

    if matches!(kind, IndexKind::Osi | IndexKind::Ossi) {
        add_ontology_edges(ontology, &mut graph)?;
    }
    if matches!(kind, IndexKind::Ssi | IndexKind::Ossi) {
        let store = store.ok_or(GraphError::StoreRequired)?;
        let semantic = semantic_edges(&in_scope, store, cfg.semantic_neighbors)?;
        match kind {
            IndexKind::Ssi => {
                for (a, b, w) in semantic {
                    graph.merge_edge_max(&a, &b, w)?;
                }
            }
            IndexKind::Ossi => {
                for (a, b, w) in semantic {
                    let scaled = cfg.ossi_semantic_weight * w;
                    // ontology edges keep 1.0; reciprocal semantic proposals
                    // carry identical weights, so the first insertion wins
                    if scaled > 0.0 && graph.weight(&a, &b).is_none() {
                        graph.set_edge(&a, &b, scaled)?;
                    }
                }
            }
            IndexKind::Osi => unreachable!(),
        }
    }
    Ok(graph)
}

fn add_ontology_edges(ontology: &Ontology, graph: &mut ConceptGraph) -> Result<(), GraphError> {
    for c in ontology.concepts().filter(|c| !c.obsolete) {
        for p in &c.parents {
            let parent_in_scope = ontology.get(p).map(|pc| !pc.obsolete).unwrap_or(false);
            if parent_in_scope {
                graph.set_edge(p, &c.id, 1.0)?;
            }
        }
    }
    Ok(())
}

/// Top-`k` neighbor concepts per concept by preferred-name similarity.
/// Candidates are restricted to in-scope concepts; ties break toward the
/// smaller concept position (ascending id), matching exact-search order.
fn semantic_edges(
    in_scope: &[&ConceptId],
    store: &EmbeddingStore,
    k: usize,
) -> Result<Vec<(ConceptId, ConceptId, f64)>, GraphError> {
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(in_scope.len());
    for &id in in_scope {
        match store.preferred_row(id) {
            Some(row) => rows.push(row),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(GraphError::MissingEmbedding { concepts: missing });
    }

    let positions: Vec<usize> = (0..in_scope.len()).collect();
    let neighbor_lists = map_ordered(&positions, false, |&i| {
        let mut sims: Vec<(usize, f64)> = (0..in_scope.len())
            .filter(|&j| j != i)
            .map(|j| (j, store.row_similarity(rows[i], rows[j])))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(k);
        sims
    });

    let mut edges = Vec::new();
    for (i, neighbors) in neighbor_lists.into_iter().enumerate() {
        for (j, w) in neighbors {
            if w > 0.0 {
                edges.push((in_scope[i].clone(), in_scope[j].clone(), w));
            }
        }
    }
    Ok(edges)
}
