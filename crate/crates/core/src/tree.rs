//! Hierarchical label tree and digit-path concept indices.
//!
//! Every concept of an indexed ontology is exactly one leaf of a
//! [`LabelTree`]; internal nodes hold at most ten ordered children, so a
//! root-to-leaf position path is a sequence of digits 0-9. Children are kept
//! in canonical order (ascending by the smallest concept id contained in the
//! subtree), which makes index assignment reproducible across builds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ontology::ConceptId;
use crate::util::sha256_hex;

/// Hard upper bound on children per internal node; keeps one tree level in
/// one index digit.
pub const MAX_CHILDREN: usize = 10;

const TREE_FILE_VERSION: u32 = 1;

/// Non-empty sequence of digits 0-9 addressing a path from the root.
///
/// Indices produced by a recognizer may be arbitrary digit sequences; they
/// need not decode to a leaf of any particular tree.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptIndex(Vec<u8>);

impl ConceptIndex {
    pub fn new(digits: Vec<u8>) -> Result<Self, TreeError> {
        if digits.is_empty() {
            return Err(TreeError::EmptyIndex);
        }
        if let Some(&d) = digits.iter().find(|&&d| d > 9) {
            return Err(TreeError::InvalidDigit { digit: d });
        }
        Ok(ConceptIndex(digits))
    }

    pub fn digits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for ConceptIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl fmt::Debug for ConceptIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConceptIndex({self})")
    }
}

impl FromStr for ConceptIndex {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut digits = Vec::new();
        for part in s.split('-') {
            match part.parse::<u8>() {
                Ok(d) if d <= 9 && part.len() == 1 => digits.push(d),
                _ => {
                    return Err(TreeError::IndexParse {
                        value: s.to_string(),
                    })
                }
            }
        }
        ConceptIndex::new(digits)
    }
}

impl Serialize for ConceptIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConceptIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Builder shape for assembling a tree before validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(ConceptId),
    Internal(Vec<TreeNode>),
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf(ConceptId),
    Internal(Vec<usize>),
}

/// Validated label tree stored as an arena with cached leaf counts.
///
/// Invariants: the root is internal, every internal node has 1..=10 children
/// in canonical order, and every concept appears in exactly one leaf.
#[derive(Clone, Debug)]
pub struct LabelTree {
    kinds: Vec<NodeKind>,
    leaf_counts: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("concept index must not be empty")]
    EmptyIndex,
    #[error("index digit {digit} out of range 0-9")]
    InvalidDigit { digit: u8 },
    #[error("cannot parse concept index {value:?}")]
    IndexParse { value: String },
    #[error("tree root must be an internal node")]
    RootMustBeInternal,
    #[error("internal node has no children")]
    EmptyInternal,
    #[error("internal node has {count} children (max {MAX_CHILDREN})")]
    TooManyChildren { count: usize },
    #[error("concept {0} appears in more than one leaf")]
    DuplicateConcept(ConceptId),
    #[error("unknown prefix {prefix:?}")]
    UnknownPrefix { prefix: Vec<u8> },
    #[error("tree file version {found} unsupported (expected {TREE_FILE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("tree file checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("malformed tree file: {0}")]
    Malformed(String),
}

impl LabelTree {
    /// Validates and canonicalizes a built tree: children of every internal
    /// node are ordered by the smallest concept id in their subtree.
    pub fn new(root: TreeNode) -> Result<Self, TreeError> {
        if matches!(root, TreeNode::Leaf(_)) {
            return Err(TreeError::RootMustBeInternal);
        }
        let mut tree = LabelTree {
            kinds: Vec::new(),
            leaf_counts: Vec::new(),
        };
        let mut seen = std::collections::BTreeSet::new();
        tree.insert(root, &mut seen)?;
        Ok(tree)
    }

    /// Returns (node index, leaf count, min concept id) of the inserted node.
    fn insert(
        &mut self,
        node: TreeNode,
        seen: &mut std::collections::BTreeSet<ConceptId>,
    ) -> Result<(usize, usize, ConceptId), TreeError> {
        match node {
            TreeNode::Leaf(concept) => {
                if !seen.insert(concept.clone()) {
                    return Err(TreeError::DuplicateConcept(concept));
                }
                let idx = self.kinds.len();
                self.kinds.push(NodeKind::Leaf(concept.clone()));
                self.leaf_counts.push(1);
                Ok((idx, 1, concept))
            }
            TreeNode::Internal(children) => {
                if children.is_empty() {
                    return Err(TreeError::EmptyInternal);
                }
                if children.len() > MAX_CHILDREN {
                    return Err(TreeError::TooManyChildren {
                        count: children.len(),
                    });
                }
                let idx = self.kinds.len();
                self.kinds.push(NodeKind::Internal(Vec::new()));
                self.leaf_counts.push(0);
                let mut built = Vec::new();
                for child in children {
                    built.push(self.insert(child, seen)?);
                }
                built.sort_by(|a, b| a.2.cmp(&b.2));
                let total: usize = built.iter().map(|(_, n, _)| n).sum();
                let min = built[0].2.clone();
                let ids = built.iter().map(|(i, _, _)| *i).collect();
                self.kinds[idx] = NodeKind::Internal(ids);
                self.leaf_counts[idx] = total;
                Ok((idx, total, min))
            }
        }
    }

    /// Total number of leaf concepts (the `T` of the evaluation metrics).
    pub fn concept_count(&self) -> usize {
        self.leaf_counts[0]
    }

    /// Walks `prefix` from the root; `&[]` addresses the root itself.
    fn node_at_prefix(&self, prefix: &[u8]) -> Option<usize> {
        let mut cur = 0usize;
        for &d in prefix {
            match &self.kinds[cur] {
                NodeKind::Internal(children) => {
                    cur = *children.get(d as usize)?;
                }
                NodeKind::Leaf(_) => return None,
            }
        }
        Some(cur)
    }

    /// Number of leaf concepts under the node addressed by `prefix`.
    pub fn count_prefix(&self, prefix: &[u8]) -> Result<usize, TreeError> {
        self.node_at_prefix(prefix)
            .map(|n| self.leaf_counts[n])
            .ok_or_else(|| TreeError::UnknownPrefix {
                prefix: prefix.to_vec(),
            })
    }

    /// Decodes an index to its leaf concept; `None` unless the full digit
    /// path lands exactly on a leaf.
    pub fn decode(&self, index: &ConceptIndex) -> Option<&ConceptId> {
        let node = self.node_at_prefix(index.digits())?;
        match &self.kinds[node] {
            NodeKind::Leaf(c) => Some(c),
            NodeKind::Internal(_) => None,
        }
    }

    /// Digit-path index for every concept. Children are numbered by their
    /// canonical position, so the mapping is a pure function of the tree.
    pub fn assign_indices(&self) -> BTreeMap<ConceptId, ConceptIndex> {
        let mut map = BTreeMap::new();
        let mut stack: Vec<(usize, Vec<u8>)> = vec![(0, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            match &self.kinds[node] {
                NodeKind::Leaf(c) => {
                    map.insert(c.clone(), ConceptIndex(path));
                }
                NodeKind::Internal(children) => {
                    for (pos, &child) in children.iter().enumerate() {
                        let mut p = path.clone();
                        p.push(pos as u8);
                        stack.push((child, p));
                    }
                }
            }
        }
        map
    }

    /// Leaf concepts in canonical (index) order.
    pub fn leaves(&self) -> Vec<&ConceptId> {
        let mut out = Vec::with_capacity(self.concept_count());
        self.collect_leaves(0, &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, node: usize, out: &mut Vec<&'a ConceptId>) {
        match &self.kinds[node] {
            NodeKind::Leaf(c) => out.push(c),
            NodeKind::Internal(children) => {
                for &c in children {
                    self.collect_leaves(c, out);
                }
            }
        }
    }

    /// Child count per internal node, in DFS order. Used by structural checks.
    pub fn internal_child_counts(&self) -> Vec<usize> {
        self.kinds
            .iter()
            .filter_map(|k| match k {
                NodeKind::Internal(c) => Some(c.len()),
                NodeKind::Leaf(_) => None,
            })
            .collect()
    }

    /// Concept sets of every internal node (each internal node is a cluster).
    pub fn clusters(&self) -> Vec<Vec<&ConceptId>> {
        let mut out = Vec::new();
        for (i, k) in self.kinds.iter().enumerate() {
            if matches!(k, NodeKind::Internal(_)) {
                let mut leaves = Vec::new();
                self.collect_leaves(i, &mut leaves);
                out.push(leaves);
            }
        }
        out
    }

    fn to_value(&self, node: usize) -> serde_json::Value {
        match &self.kinds[node] {
            NodeKind::Leaf(c) => serde_json::Value::String(c.as_str().to_string()),
            NodeKind::Internal(children) => serde_json::Value::Array(
                children.iter().map(|&c| self.to_value(c)).collect(),
            ),
        }
    }

    fn from_value(value: &serde_json::Value) -> Result<TreeNode, TreeError> {
        match value {
            serde_json::Value::String(s) => {
                let id = ConceptId::new(s.clone())
                    .map_err(|e| TreeError::Malformed(e.to_string()))?;
                Ok(TreeNode::Leaf(id))
            }
            serde_json::Value::Array(items) => {
                let children = items
                    .iter()
                    .map(Self::from_value)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TreeNode::Internal(children))
            }
            other => Err(TreeError::Malformed(format!(
                "expected string or array node, found {other}"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    version: u32,
    fingerprint: String,
    checksum: String,
    tree: serde_json::Value,
}

/// Saves a tree as versioned, checksummed JSON. Identical trees and
/// fingerprints produce byte-identical files.
pub fn save_tree(tree: &LabelTree, fingerprint: &str, path: impl AsRef<Path>) -> Result<(), TreeError> {
    fs::write(path.as_ref(), tree_file_bytes(tree, fingerprint))?;
    Ok(())
}

/// Canonical serialized form of a tree file (exposed for determinism checks).
pub fn tree_file_bytes(tree: &LabelTree, fingerprint: &str) -> Vec<u8> {
    let value = tree.to_value(0);
    let tree_bytes = serde_json::to_vec(&value).expect("tree value serializes");
    let file = TreeFile {
        version: TREE_FILE_VERSION,
        fingerprint: fingerprint.to_string(),
        checksum: format!("sha256:{}", sha256_hex(&tree_bytes)),
        tree: value,
    };
    let mut bytes = serde_json::to_vec(&file).expect("tree file serializes");
    bytes.push(b'\n');
    bytes
}

/// Loads a tree file, verifying version and checksum, and recomputes the
/// concept index map.
pub fn load_tree(
    path: impl AsRef<Path>,
) -> Result<(LabelTree, BTreeMap<ConceptId, ConceptIndex>), TreeError> {
    let bytes = fs::read(path.as_ref())?;
    let file: TreeFile =
        serde_json::from_slice(&bytes).map_err(|e| TreeError::Malformed(e.to_string()))?;
    if file.version != TREE_FILE_VERSION {
        return Err(TreeError::VersionMismatch {
            found: file.version,
        });
    }
    let tree_bytes = serde_json::to_vec(&file.tree).expect("tree value serializes");
    let computed = format!("sha256:{}", sha256_hex(&tree_bytes));
    if computed != file.checksum {
        return Err(TreeError::ChecksumMismatch {
            stored: file.checksum,
            computed,
        });
    }
    let root = LabelTree::from_value(&file.tree)?;
    let tree = LabelTree::new(root)?;
    let map = tree.assign_indices();
    Ok((tree, map))
}

/// Writes the index map as TSV: `concept_id<TAB>0-0-3`, sorted by concept id.
pub fn write_index_map<W: std::io::Write>(
    map: &BTreeMap<ConceptId, ConceptIndex>,
    mut w: W,
) -> Result<(), TreeError> {
    for (concept, index) in map {
        writeln!(w, "{concept}\t{index}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn leaf(s: &str) -> TreeNode {
        TreeNode::Leaf(id(s))
    }

    fn ci(digits: &[u8]) -> ConceptIndex {
        ConceptIndex::new(digits.to_vec()).unwrap()
    }

    #[test]
    fn index_display_and_parse_round_trip() {
        let idx = ci(&[0, 1, 3]);
        assert_eq!(idx.to_string(), "0-1-3");
        assert_eq!("0-1-3".parse::<ConceptIndex>().unwrap(), idx);
        assert!("".parse::<ConceptIndex>().is_err());
        assert!("0-12".parse::<ConceptIndex>().is_err());
        assert!("a-1".parse::<ConceptIndex>().is_err());
    }

    #[test]
    fn children_ordered_by_smallest_contained_concept() {
        let tree = LabelTree::new(TreeNode::Internal(vec![leaf("B"), leaf("A")])).unwrap();
        let map = tree.assign_indices();
        assert_eq!(map[&id("A")], ci(&[0]));
        assert_eq!(map[&id("B")], ci(&[1]));
    }

    #[test]
    fn nested_ordering_uses_subtree_minimum() {
        // Subtree containing "A" sorts before the lone leaf "B" even though
        // the subtree also contains "Z".
        let tree = LabelTree::new(TreeNode::Internal(vec![
            leaf("B"),
            TreeNode::Internal(vec![leaf("Z"), leaf("A")]),
        ]))
        .unwrap();
        let map = tree.assign_indices();
        assert_eq!(map[&id("A")], ci(&[0, 0]));
        assert_eq!(map[&id("Z")], ci(&[0, 1]));
        assert_eq!(map[&id("B")], ci(&[1]));
    }

    #[test]
    fn figure_two_shape_assigns_triple_zero() {
        // root -> {cluster 0, cluster 1}; cluster 0 -> {cluster 0-0, 0-1};
        // the first concept under 0-0 gets 0-0-0.
        let tree = LabelTree::new(TreeNode::Internal(vec![
            TreeNode::Internal(vec![
                TreeNode::Internal(vec![leaf("A"), leaf("B")]),
                TreeNode::Internal(vec![leaf("C"), leaf("D")]),
            ]),
            TreeNode::Internal(vec![leaf("E"), leaf("F")]),
        ]))
        .unwrap();
        let map = tree.assign_indices();
        assert_eq!(map[&id("A")], ci(&[0, 0, 0]));
    }

    #[test]
    fn decode_requires_exact_leaf() {
        let tree = LabelTree::new(TreeNode::Internal(vec![
            TreeNode::Internal(vec![leaf("A"), leaf("B")]),
            leaf("C"),
        ]))
        .unwrap();
        assert_eq!(tree.decode(&ci(&[0, 0])), Some(&id("A")));
        assert_eq!(tree.decode(&ci(&[0])), None); // internal node
        assert_eq!(tree.decode(&ci(&[1, 0])), None); // walks past a leaf
        assert_eq!(tree.decode(&ci(&[5])), None); // out of range
        assert_eq!(tree.decode(&ci(&[1])), Some(&id("C")));
    }

    #[test]
    fn count_prefix_counts_leaves() {
        let tree = LabelTree::new(TreeNode::Internal(vec![
            TreeNode::Internal(vec![leaf("A"), leaf("B"), leaf("C")]),
            TreeNode::Internal(vec![leaf("D"), leaf("E")]),
        ]))
        .unwrap();
        assert_eq!(tree.count_prefix(&[]).unwrap(), 5);
        assert_eq!(tree.count_prefix(&[0]).unwrap(), 3);
        assert_eq!(tree.count_prefix(&[1]).unwrap(), 2);
        assert_eq!(tree.count_prefix(&[1, 0]).unwrap(), 1);
        assert!(tree.count_prefix(&[7]).is_err());
    }

    #[test]
    fn count_prefix_sums_over_children() {
        let tree = LabelTree::new(TreeNode::Internal(vec![
            TreeNode::Internal(vec![leaf("A"), leaf("B")]),
            TreeNode::Internal(vec![leaf("C")]),
            leaf("D"),
        ]))
        .unwrap();
        let total: usize = (0..3)
            .map(|d| tree.count_prefix(&[d]).unwrap())
            .sum();
        assert_eq!(total, tree.count_prefix(&[]).unwrap());
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(matches!(
            LabelTree::new(TreeNode::Leaf(id("A"))),
            Err(TreeError::RootMustBeInternal)
        ));
        assert!(matches!(
            LabelTree::new(TreeNode::Internal(vec![])),
            Err(TreeError::EmptyInternal)
        ));
        let many: Vec<TreeNode> = (0..11).map(|i| leaf(&format!("C{i:02}"))).collect();
        assert!(matches!(
            LabelTree::new(TreeNode::Internal(many)),
            Err(TreeError::TooManyChildren { count: 11 })
        ));
        assert!(matches!(
            LabelTree::new(TreeNode::Internal(vec![leaf("A"), leaf("A")])),
            Err(TreeError::DuplicateConcept(_))
        ));
    }

    #[test]
    fn save_load_round_trip_and_byte_stability() {
        let tree = LabelTree::new(TreeNode::Internal(vec![
            TreeNode::Internal(vec![leaf("A"), leaf("B")]),
            leaf("C"),
        ]))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        save_tree(&tree, "fp-test", &path).unwrap();
        let (loaded, map) = load_tree(&path).unwrap();
        assert_eq!(map, tree.assign_indices());
        assert_eq!(loaded.concept_count(), 3);

        let path2 = dir.path().join("tree2.json");
        save_tree(&loaded, "fp-test", &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let tree = LabelTree::new(TreeNode::Internal(vec![leaf("AX"), leaf("BX")])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        save_tree(&tree, "fp", &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Flip one byte inside a concept id (keep JSON parseable).
        let pos = bytes.windows(2).position(|w| w == b"AX").unwrap();
        bytes[pos] = b'Q';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_tree(&path),
            Err(TreeError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let tree = LabelTree::new(TreeNode::Internal(vec![leaf("A")])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        save_tree(&tree, "fp", &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_tree(&path),
            Err(TreeError::VersionMismatch { found: 9 })
        ));
    }

    proptest::proptest! {
        /// Round trip: every assigned index decodes back to its concept, and
        /// index prefixes address nodes whose leaf sets contain the concept.
        #[test]
        fn assigned_indices_decode_back(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut counter = 0usize;
            let root = random_node(&mut rng, 3, &mut counter, true);
            let tree = LabelTree::new(root).unwrap();
            let map = tree.assign_indices();
            proptest::prop_assert_eq!(map.len(), tree.concept_count());
            for (concept, index) in &map {
                proptest::prop_assert_eq!(tree.decode(index), Some(concept));
                for l in 0..index.len() {
                    proptest::prop_assert!(tree.count_prefix(&index.digits()[..l]).unwrap() >= 1);
                }
            }
        }
    }

    fn random_node(
        rng: &mut rand_chacha::ChaCha8Rng,
        depth: usize,
        counter: &mut usize,
        force_internal: bool,
    ) -> TreeNode {
        use rand::Rng;
        let make_leaf = !force_internal && (depth == 0 || rng.gen_bool(0.4));
        if make_leaf {
            *counter += 1;
            TreeNode::Leaf(id(&format!("C{:04}", *counter)))
        } else {
            let n = rng.gen_range(1..=MAX_CHILDREN.min(4));
            let children = (0..n)
                .map(|_| random_node(rng, depth - 1, counter, false))
                .collect();
            TreeNode::Internal(children)
        }
    }
}
