//! Normalized in-memory ontology model and JSONL ingestion.
//!
//! Ontologies are ingested from a normalized JSONL format (one concept per
//! line); OBO/OWL conversion is an external preprocessing concern. Both
//! tree-shaped and DAG-shaped (multi-parent) ontologies are supported:
//! "descendants" always means reachable through any parent path.
//!
//! An [`Ontology`] is immutable after load and safe to share across worker
//! threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Non-empty, whitespace-free concept identifier such as `HP:0000118`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(value: impl Into<String>) -> Result<Self, OntologyError> {
        let value = value.into();
        if value.is_empty() {
            return Err(OntologyError::InvalidConceptId {
                value,
                reason: "empty identifier",
            });
        }
        if value.chars().any(char::is_whitespace) {
            return Err(OntologyError::InvalidConceptId {
                value,
                reason: "identifier contains whitespace",
            });
        }
        Ok(ConceptId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConceptId({})", self.0)
    }
}

impl TryFrom<String> for ConceptId {
    type Error = OntologyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ConceptId::new(value)
    }
}

impl From<ConceptId> for String {
    fn from(id: ConceptId) -> String {
        id.0
    }
}

/// One ontology concept: identifier, names, and parent links.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Concept {
    pub id: ConceptId,
    pub preferred_name: String,
    /// Deduplicated; never contains `preferred_name`.
    pub synonyms: Vec<String>,
    /// Deduplicated; never contains the concept's own id.
    pub parents: Vec<ConceptId>,
    pub obsolete: bool,
}

/// Validated ontology: every parent resolves, the parent relation is acyclic,
/// and at least one root (concept without parents) exists.
#[derive(Clone, Debug)]
pub struct Ontology {
    concepts: BTreeMap<ConceptId, Concept>,
    roots: BTreeSet<ConceptId>,
}

/// One `(concept, name)` pair; rows are dense and align with embedding
/// matrices written for the same ontology.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameRecord {
    pub row: usize,
    pub concept: ConceptId,
    pub text: String,
    pub preferred: bool,
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid concept id {value:?}: {reason}")]
    InvalidConceptId { value: String, reason: &'static str },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate concept id {id}")]
    DuplicateId { id: ConceptId, line: usize },
    #[error("dangling parent references: {}", format_dangling(.refs))]
    DanglingParents { refs: Vec<(ConceptId, ConceptId)> },
    #[error("parent relation contains a cycle: {}", format_cycle(.cycle))]
    Cycle { cycle: Vec<ConceptId> },
    #[error("ontology is empty")]
    Empty,
    #[error("unknown root concept {0}")]
    UnknownRoot(ConceptId),
}

fn format_dangling(refs: &[(ConceptId, ConceptId)]) -> String {
    refs.iter()
        .map(|(child, parent)| format!("{child}->{parent}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_cycle(cycle: &[ConceptId]) -> String {
    cycle
        .iter()
        .map(|c| c.as_str().to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Deserialize)]
struct RawConcept {
    id: String,
    name: String,
    #[serde(default)]
    synonyms: Vec<String>,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default)]
    obsolete: bool,
}

/// Serialization shape for the ontology JSONL interchange format.
#[derive(Serialize)]
struct RawConceptOut<'a> {
    id: &'a str,
    name: &'a str,
    synonyms: &'a [String],
    parents: Vec<&'a str>,
    obsolete: bool,
}

impl Ontology {
    /// Builds a validated ontology from concepts.
    pub fn new(concepts: Vec<Concept>) -> Result<Self, OntologyError> {
        let mut map = BTreeMap::new();
        for c in concepts {
            if map.insert(c.id.clone(), c).is_some() {
                let id = map.keys().next_back().cloned().unwrap();
                return Err(OntologyError::DuplicateId { id, line: 0 });
            }
        }
        Self::validate(map)
    }

    fn validate(concepts: BTreeMap<ConceptId, Concept>) -> Result<Self, OntologyError> {
        if concepts.is_empty() {
            return Err(OntologyError::Empty);
        }
        let mut dangling = Vec::new();
        for c in concepts.values() {
            for p in &c.parents {
                if !concepts.contains_key(p) {
                    dangling.push((c.id.clone(), p.clone()));
                }
            }
        }
        if !dangling.is_empty() {
            dangling.sort();
            return Err(OntologyError::DanglingParents { refs: dangling });
        }
        check_acyclic(&concepts)?;
        let roots = concepts
            .values()
            .filter(|c| c.parents.is_empty())
            .map(|c| c.id.clone())
            .collect();
        Ok(Ontology { concepts, roots })
    }

    /// Loads and validates an ontology from a JSONL file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let file = File::open(path.as_ref())?;
        Self::from_jsonl_reader(BufReader::new(file))
    }

    /// Parses the JSONL interchange format: one object per line with fields
    /// `id`, `name`, `synonyms`, `parents`, `obsolete`. Blank lines are
    /// skipped; obsolete concepts are retained and flagged.
    pub fn from_jsonl_reader<R: BufRead>(reader: R) -> Result<Self, OntologyError> {
        let mut concepts: BTreeMap<ConceptId, Concept> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawConcept =
                serde_json::from_str(&line).map_err(|e| OntologyError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let concept = normalize_concept(raw).map_err(|message| OntologyError::Parse {
                line: line_no,
                message,
            })?;
            if concepts.contains_key(&concept.id) {
                return Err(OntologyError::DuplicateId {
                    id: concept.id,
                    line: line_no,
                });
            }
            concepts.insert(concept.id.clone(), concept);
        }
        Self::validate(concepts)
    }

    /// Writes the ontology back out in the JSONL interchange format.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<(), OntologyError> {
        for c in self.concepts.values() {
            let raw = RawConceptOut {
                id: c.id.as_str(),
                name: &c.preferred_name,
                synonyms: &c.synonyms,
                parents: c.parents.iter().map(|p| p.as_str()).collect(),
                obsolete: c.obsolete,
            };
            let line = serde_json::to_string(&raw).expect("concept serializes");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.concepts.contains_key(id)
    }

    pub fn get(&self, id: &ConceptId) -> Option<&Concept> {
        self.concepts.get(id)
    }

    /// Concepts in ascending id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn roots(&self) -> &BTreeSet<ConceptId> {
        &self.roots
    }

    /// Child adjacency derived from the parent links.
    pub fn children_map(&self) -> BTreeMap<&ConceptId, Vec<&ConceptId>> {
        let mut children: BTreeMap<&ConceptId, Vec<&ConceptId>> = BTreeMap::new();
        for c in self.concepts.values() {
            for p in &c.parents {
                children.entry(p).or_default().push(&c.id);
            }
        }
        children
    }

    /// Sub-ontology of all concepts reachable from `root` through any parent
    /// path; `root` itself is excluded and parent lists are pruned to in-scope
    /// members. With `drop_obsolete`, obsolete concepts are removed and their
    /// children re-parented onto the nearest retained ancestors.
    pub fn filter_descendants(
        &self,
        root: &ConceptId,
        drop_obsolete: bool,
    ) -> Result<Ontology, OntologyError> {
        if !self.concepts.contains_key(root) {
            return Err(OntologyError::UnknownRoot(root.clone()));
        }
        let children = self.children_map();
        let mut visited: BTreeSet<ConceptId> = BTreeSet::new();
        let mut queue: VecDeque<&ConceptId> = VecDeque::new();
        queue.push_back(root);
        while let Some(cur) = queue.pop_front() {
            if let Some(kids) = children.get(cur) {
                for &kid in kids {
                    if kid != root && visited.insert(kid.clone()) {
                        queue.push_back(kid);
                    }
                }
            }
        }

        let kept: BTreeSet<ConceptId> = visited
            .iter()
            .filter(|id| !drop_obsolete || !self.concepts[*id].obsolete)
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(OntologyError::Empty);
        }

        // Nearest retained ancestors of a dropped (obsolete) in-scope concept,
        // climbing through chains of dropped parents.
        let mut memo: HashMap<ConceptId, BTreeSet<ConceptId>> = HashMap::new();
        let mut out = BTreeMap::new();
        for id in &kept {
            let c = &self.concepts[id];
            let mut parents = BTreeSet::new();
            for p in &c.parents {
                self.resolve_parent(p, root, &visited, &kept, &mut memo, &mut parents);
            }
            out.insert(
                id.clone(),
                Concept {
                    id: id.clone(),
                    preferred_name: c.preferred_name.clone(),
                    synonyms: c.synonyms.clone(),
                    parents: parents.into_iter().collect(),
                    obsolete: c.obsolete,
                },
            );
        }
        Self::validate(out)
    }

    fn resolve_parent(
        &self,
        p: &ConceptId,
        root: &ConceptId,
        visited: &BTreeSet<ConceptId>,
        kept: &BTreeSet<ConceptId>,
        memo: &mut HashMap<ConceptId, BTreeSet<ConceptId>>,
        into: &mut BTreeSet<ConceptId>,
    ) {
        if kept.contains(p) {
            into.insert(p.clone());
            return;
        }
        if p == root || !visited.contains(p) {
            return; // out of scope
        }
        if let Some(cached) = memo.get(p) {
            into.extend(cached.iter().cloned());
            return;
        }
        let mut resolved = BTreeSet::new();
        for gp in &self.concepts[p].parents {
            self.resolve_parent(gp, root, visited, kept, memo, &mut resolved);
        }
        into.extend(resolved.iter().cloned());
        memo.insert(p.clone(), resolved);
    }

    /// One record per `(concept, name)` pair, in deterministic order: by
    /// concept id, preferred name first, then synonyms ascending. Row numbers
    /// are dense and define the row layout of any embedding matrix built for
    /// this ontology.
    pub fn name_table(&self) -> Vec<NameRecord> {
        let mut records = Vec::new();
        for c in self.concepts.values() {
            records.push(NameRecord {
                row: records.len(),
                concept: c.id.clone(),
                text: c.preferred_name.clone(),
                preferred: true,
            });
            let mut synonyms = c.synonyms.clone();
            synonyms.sort();
            for s in synonyms {
                records.push(NameRecord {
                    row: records.len(),
                    concept: c.id.clone(),
                    text: s,
                    preferred: false,
                });
            }
        }
        records
    }
}

fn normalize_concept(raw: RawConcept) -> Result<Concept, String> {
    let id = ConceptId::new(raw.id).map_err(|e| e.to_string())?;
    if raw.name.is_empty() {
        return Err(format!("concept {id} has an empty name"));
    }
    let mut seen = HashSet::new();
    let mut synonyms = Vec::new();
    for s in raw.synonyms {
        if s.is_empty() || s == raw.name {
            continue;
        }
        if seen.insert(s.clone()) {
            synonyms.push(s);
        }
    }
    let mut parent_seen = HashSet::new();
    let mut parents = Vec::new();
    for p in raw.parents {
        let pid = ConceptId::new(p).map_err(|e| e.to_string())?;
        if parent_seen.insert(pid.clone()) {
            parents.push(pid);
        }
    }
    Ok(Concept {
        id,
        preferred_name: raw.name,
        synonyms,
        parents,
        obsolete: raw.obsolete,
    })
}

/// Kahn's algorithm over parent->child edges; on failure walks the residual
/// graph to report one concrete cycle.
fn check_acyclic(concepts: &BTreeMap<ConceptId, Concept>) -> Result<(), OntologyError> {
    let ids: Vec<&ConceptId> = concepts.keys().collect();
    let index: HashMap<&ConceptId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut indegree = vec![0usize; ids.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for (i, id) in ids.iter().enumerate() {
        for p in &concepts[*id].parents {
            let pi = index[p];
            children[pi].push(i);
            indegree[i] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..ids.len()).filter(|&i| indegree[i] == 0).collect();
    let mut processed = 0;
    while let Some(i) = queue.pop_front() {
        processed += 1;
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if processed == ids.len() {
        return Ok(());
    }
    // Every remaining node lies on or leads into a cycle; follow parent links
    // within the residual set until a node repeats.
    let residual: HashSet<usize> = (0..ids.len()).filter(|&i| indegree[i] > 0).collect();
    let start = *residual.iter().min().unwrap();
    let mut seen_at: HashMap<usize, usize> = HashMap::new();
    let mut path = vec![start];
    loop {
        let cur = *path.last().unwrap();
        seen_at.insert(cur, path.len() - 1);
        let next = concepts[ids[cur]]
            .parents
            .iter()
            .map(|p| index[p])
            .find(|pi| residual.contains(pi))
            .expect("residual node has a residual parent");
        if let Some(&at) = seen_at.get(&next) {
            let cycle = path[at..].iter().map(|&i| ids[i].clone()).collect();
            return Err(OntologyError::Cycle { cycle });
        }
        path.push(next);
    }
}
