//! Core toolkit for ontology-aware concept recognition experiments.
//!
//! The crate covers the offline half of a concept-recognition workbench:
//!
//! - [`ontology`]: load and subset tree- or DAG-shaped ontologies from JSONL.
//! - [`embedding`]: exact nearest-neighbor search over precomputed name
//!   embeddings and threshold-gated name-to-concept matching.
//! - [`graph`] / [`partition`] / [`tree`]: build concept graphs (ontology
//!   edges, semantic edges, or both), recursively partition them into a label
//!   tree with at most ten children per node, and assign each concept a
//!   digit-path index.
//! - [`metrics`]: exact-match micro P/R/F1 plus the unseen-generalization
//!   metrics U-RC and U-CS defined over index prefixes.
//! - [`splits`]: training splits with guaranteed unseen-concept ratios and an
//!   exponential size schedule.
//! - [`retrieval`]: BM25 over ontology names and per-passage candidate pools.
//! - [`stats`]: the paired one-sided t-test and Spearman rank correlation used
//!   to compare runs.
//!
//! Batch operations (`match_names`, corpus evaluation, candidate pooling) run
//! data-parallel under the default `parallel` feature and fall back to
//! sequential loops without it; `*_seq` variants are always available for
//! comparison.

pub mod corpus;
pub mod embedding;
pub mod graph;
pub mod metrics;
pub mod ontology;
pub(crate) mod par;
pub mod partition;
pub mod retrieval;
pub mod splits;
pub mod stats;
pub mod tree;
pub mod util;

pub use ontology::{Concept, ConceptId, Ontology};
pub use tree::{ConceptIndex, LabelTree};
