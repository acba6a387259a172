//! Precomputed name embeddings, exact nearest-neighbor search, and
//! threshold-gated name-to-concept matching.
//!
//! Vector file (bit-exact): 4-byte ASCII magic `EMB1`, u32-LE row count `n`,
//! u32-LE dimension `d`, then `n*d` IEEE-754 f32 little-endian values in
//! row-major order. Names file: headerless UTF-8 TSV with columns
//! `row`, `concept_id`, `name_text`, `preferred` (0|1), LF line endings.
//!
//! Similarity is clamped cosine over unit-normalized vectors, computed in
//! f64: monotone with L2 distance on the unit sphere and confined to [0,1]
//! so a fixed acceptance threshold is meaningful. Search is an exact full
//! scan; at the corpus sizes involved (~1e5 rows) approximate indexing buys
//! nothing and costs determinism.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::ontology::{ConceptId, NameRecord};
use crate::par::map_ordered;

const MAGIC: &[u8; 4] = b"EMB1";

/// Dense name-embedding matrix aligned with `(concept, name)` records.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dim: usize,
    matrix: Vec<f32>,
    row_norms: Vec<f64>,
    records: Vec<NameRecord>,
}

/// Result of matching one generated name against the store.
///
/// `concept` is present iff the best similarity met the threshold in force
/// at call time; the best row and its similarity are always reported.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub query_text: String,
    pub concept: Option<ConceptId>,
    pub similarity: f64,
    pub matched_name_row: Option<usize>,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected EMB1")]
    MagicMismatch,
    #[error("vector file truncated: expected {expected} bytes of data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("vector file has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("vector file declares zero dimension")]
    ZeroDim,
    #[error("row count mismatch: {vectors} vector rows vs {names} name records")]
    RowCountMismatch { vectors: usize, names: usize },
    #[error("non-finite value in vector row {row}")]
    NonFinite { row: usize },
    #[error("vector row {row} has zero norm; normalization undefined")]
    ZeroVector { row: usize },
    #[error("names file line {line}: {message}")]
    NamesParse { line: usize, message: String },
    #[error("names file rows are not exactly 0..{expected}")]
    NamesRowGap { expected: usize },
    #[error("query dimension {query} does not match store dimension {store}")]
    DimensionMismatch { query: usize, store: usize },
    #[error("query vector has zero norm or non-finite values")]
    DegenerateQuery,
    #[error("threshold {0} outside [0,1]")]
    InvalidThreshold(f64),
}

/// Reads an EMB1 vector file; returns `(rows, dim, row-major data)`.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>), EmbeddingError> {
    let bytes = fs::read(path.as_ref())?;
    parse_vectors(&bytes)
}

pub fn parse_vectors(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), EmbeddingError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::MagicMismatch);
    }
    if bytes.len() < 12 {
        return Err(EmbeddingError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let expected = n * d * 4;
    let data = &bytes[12..];
    if data.len() < expected {
        return Err(EmbeddingError::Truncated {
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(EmbeddingError::TrailingBytes {
            extra: data.len() - expected,
        });
    }
    let mut values = Vec::with_capacity(n * d);
    for chunk in data.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((n, d, values))
}

/// Writes an EMB1 vector file.
pub fn write_vectors<W: Write>(mut w: W, dim: usize, rows: &[Vec<f32>]) -> Result<(), EmbeddingError> {
    w.write_all(MAGIC)?;
    w.write_all(&(rows.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for row in rows {
        assert_eq!(row.len(), dim, "row dimension mismatch");
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the names TSV. Rows may appear in any order but must form exactly
/// `0..n`; the result is sorted by row.
pub fn read_name_records(path: impl AsRef<Path>) -> Result<Vec<NameRecord>, EmbeddingError> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_name_records(&text)
}

pub fn parse_name_records(text: &str) -> Result<Vec<NameRecord>, EmbeddingError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(EmbeddingError::NamesParse {
                line: line_no,
                message: format!("expected 4 tab-separated columns, found {}", parts.len()),
            });
        }
        let row: usize = parts[0].parse().map_err(|_| EmbeddingError::NamesParse {
            line: line_no,
            message: format!("bad row number {:?}", parts[0]),
        })?;
        let concept = ConceptId::new(parts[1]).map_err(|e| EmbeddingError::NamesParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let preferred = match parts[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(EmbeddingError::NamesParse {
                    line: line_no,
                    message: format!("preferred flag must be 0 or 1, found {other:?}"),
                })
            }
        };
        records.push(NameRecord {
            row,
            concept,
            text: parts[2].to_string(),
            preferred,
        });
    }
    records.sort_by_key(|r| r.row);
    for (i, r) in records.iter().enumerate() {
        if r.row != i {
            return Err(EmbeddingError::NamesRowGap {
                expected: records.len(),
            });
        }
    }
    Ok(records)
}

/// Writes the names TSV in row order.
pub fn write_name_records<W: Write>(records: &[NameRecord], mut w: W) -> Result<(), EmbeddingError> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.row,
            r.concept,
            r.text,
            if r.preferred { 1 } else { 0 }
        )?;
    }
    Ok(())
}

impl EmbeddingStore {
    /// Loads and cross-validates a vector file and its names file.
    pub fn load(
        vectors_path: impl AsRef<Path>,
        names_path: impl AsRef<Path>,
    ) -> Result<Self, EmbeddingError> {
        let (n, d, matrix) = read_vectors(vectors_path)?;
        let records = read_name_records(names_path)?;
        if records.len() != n {
            return Err(EmbeddingError::RowCountMismatch {
                vectors: n,
                names: records.len(),
            });
        }
        Self::from_parts(d, matrix, records)
    }

    /// Builds a store from in-memory parts, validating finiteness and norms.
    pub fn from_parts(
        dim: usize,
        matrix: Vec<f32>,
        records: Vec<NameRecord>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if matrix.len() != records.len() * dim {
            return Err(EmbeddingError::RowCountMismatch {
                vectors: matrix.len() / dim,
                names: records.len(),
            });
        }
        let mut row_norms = Vec::with_capacity(records.len());
        for (row, chunk) in matrix.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row });
            }
            let norm = norm_f64(chunk);
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroVector { row });
            }
            row_norms.push(norm);
        }
        Ok(EmbeddingStore {
            dim,
            matrix,
            row_norms,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[NameRecord] {
        &self.records
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    /// Row of the preferred name for `concept`, if any (lowest such row).
    pub fn preferred_row(&self, concept: &ConceptId) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.preferred && &r.concept == concept)
            .map(|r| r.row)
    }

    /// Clamped cosine similarity between two stored rows.
    pub fn row_similarity(&self, a: usize, b: usize) -> f64 {
        let dot = dot_f64(self.vector(a), self.vector(b));
        clamp01(dot / (self.row_norms[a] * self.row_norms[b]))
    }

    /// Exact top-`k` rows by similarity, descending; ties break toward the
    /// lower row index. Returns fewer than `k` entries only when the store
    /// has fewer rows.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Vec<(usize, f64)>, EmbeddingError> {
        if query.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                query: query.len(),
                store: self.dim,
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::DegenerateQuery);
        }
        let qnorm = norm_f64(query);
        if qnorm == 0.0 {
            return Err(EmbeddingError::DegenerateQuery);
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|row| {
                let dot = dot_f64(query, self.vector(row));
                (row, clamp01(dot / (qnorm * self.row_norms[row])))
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

/// Matches each `(text, vector)` query to its top-1 name row; the concept is
/// assigned only when the best similarity is at or above `threshold`.
/// Concept-level deduplication across queries is a downstream concern.
pub fn match_names(
    store: &EmbeddingStore,
    queries: &[(String, Vec<f32>)],
    threshold: f64,
) -> Result<Vec<MatchResult>, EmbeddingError> {
    match_names_inner(store, queries, threshold, false)
}

/// Sequential variant of [`match_names`] (benchmark baseline).
pub fn match_names_seq(
    store: &EmbeddingStore,
    queries: &[(String, Vec<f32>)],
    threshold: f64,
) -> Result<Vec<MatchResult>, EmbeddingError> {
    match_names_inner(store, queries, threshold, true)
}

fn match_names_inner(
    store: &EmbeddingStore,
    queries: &[(String, Vec<f32>)],
    threshold: f64,
    force_seq: bool,
) -> Result<Vec<MatchResult>, EmbeddingError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EmbeddingError::InvalidThreshold(threshold));
    }
    let results = map_ordered(queries, force_seq, |(text, vector)| {
        let top = store.knn(vector, 1)?;
        Ok(match top.first() {
            Some(&(row, similarity)) => {
                let concept = (similarity >= threshold)
                    .then(|| store.records[row].concept.clone());
                MatchResult {
                    query_text: text.clone(),
                    concept,
                    similarity,
                    matched_name_row: Some(row),
                }
            }
            None => MatchResult {
                query_text: text.clone(),
                concept: None,
                similarity: 0.0,
                matched_name_row: None,
            },
        })
    });
    results.into_iter().collect()
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rec(row: usize, concept: &str, text: &str, preferred: bool) -> NameRecord {
        NameRecord {
            row,
            concept: ConceptId::new(concept).unwrap(),
            text: text.to_string(),
            preferred,
        }
    }

    fn store_from_rows(rows: Vec<Vec<f32>>) -> EmbeddingStore {
        let dim = rows[0].len();
        let records = (0..rows.len())
            .map(|i| rec(i, &format!("C{i:03}"), &format!("name {i}"), true))
            .collect();
        let matrix = rows.into_iter().flatten().collect();
        EmbeddingStore::from_parts(dim, matrix, records).unwrap()
    }

    #[test]
    fn vector_file_round_trip() {
        let rows = vec![vec![1.0f32, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.25, 8.0]];
        let mut buf = Vec::new();
        write_vectors(&mut buf, 4, &rows).unwrap();
        let (n, d, data) = parse_vectors(&buf).unwrap();
        assert_eq!((n, d), (2, 4));
        assert_eq!(data, rows.concat());
    }

    #[test]
    fn bad_magic_and_truncation_detected() {
        assert!(matches!(
            parse_vectors(b"NOPE...."),
            Err(EmbeddingError::MagicMismatch)
        ));
        let mut buf = Vec::new();
        write_vectors(&mut buf, 4, &[vec![1.0f32, 0.0, 0.0, 0.0]]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            parse_vectors(&buf),
            Err(EmbeddingError::Truncated { .. })
        ));
    }

    #[test]
    fn load_checks_row_count_and_degenerate_rows() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("v.emb");
        let np = dir.path().join("n.tsv");
        let mut vbuf = Vec::new();
        write_vectors(&mut vbuf, 4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        std::fs::write(&vp, &vbuf).unwrap();

        // 3 name lines vs 2 vector rows
        std::fs::write(&np, "0\tC0\ta\t1\n1\tC1\tb\t1\n2\tC2\tc\t1\n").unwrap();
        assert!(matches!(
            EmbeddingStore::load(&vp, &np),
            Err(EmbeddingError::RowCountMismatch { vectors: 2, names: 3 })
        ));

        // zero vector row
        let mut vbuf = Vec::new();
        write_vectors(&mut vbuf, 4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]]).unwrap();
        std::fs::write(&vp, &vbuf).unwrap();
        std::fs::write(&np, "0\tC0\ta\t1\n1\tC1\tb\t1\n").unwrap();
        assert!(matches!(
            EmbeddingStore::load(&vp, &np),
            Err(EmbeddingError::ZeroVector { row: 1 })
        ));
    }

    #[test]
    fn names_rows_must_be_dense() {
        assert!(matches!(
            parse_name_records("0\tC0\ta\t1\n2\tC2\tc\t1\n"),
            Err(EmbeddingError::NamesRowGap { .. })
        ));
        // order-independent
        let recs = parse_name_records("1\tC1\tb\t0\n0\tC0\ta\t1\n").unwrap();
        assert_eq!(recs[0].row, 0);
        assert_eq!(recs[1].row, 1);
    }

    #[test]
    fn knn_identity_query_is_exact() {
        let store = store_from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.7, 0.7],
        ]);
        let got = store.knn(&[0.0, 1.0], 2).unwrap();
        assert_eq!(got[0].0, 1);
        assert_eq!(got[0].1, 1.0);
    }

    #[test]
    fn knn_orthogonal_queries_score_zero() {
        let store = store_from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let got = store.knn(&[0.0, 0.0, 2.0], 2).unwrap();
        assert!(got.iter().all(|&(_, s)| s == 0.0));
        // negative cosine clamps to zero as well
        let got = store.knn(&[-1.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(got[0].1, 0.0);
    }

    #[test]
    fn knn_errors_on_bad_queries() {
        let store = store_from_rows(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            store.knn(&[1.0, 0.0, 0.0], 1),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            store.knn(&[0.0, 0.0], 1),
            Err(EmbeddingError::DegenerateQuery)
        ));
    }

    #[test]
    fn knn_ties_break_to_lower_row() {
        let store = store_from_rows(vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]]);
        // rows 0 and 1 are colinear: both similarity 1.0
        let got = store.knn(&[3.0, 0.0], 3).unwrap();
        assert_eq!(got[0], (0, 1.0));
        assert_eq!(got[1], (1, 1.0));
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect()
    }

    /// Independent full-scan oracle using the stated rule: clamped cosine of
    /// unit-normalized vectors, ties by ascending row.
    fn oracle_knn(rows: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let dot: f64 = r.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
                let nr: f64 = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                let nq: f64 = query.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                (i, (dot / (nr * nq)).clamp(0.0, 1.0))
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let rows = random_rows(100, 8, 42);
        let store = store_from_rows(rows.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let got = store.knn(&q, 10).unwrap();
            let want = oracle_knn(&rows, &q, 10);
            let got_rows: Vec<usize> = got.iter().map(|&(r, _)| r).collect();
            let want_rows: Vec<usize> = want.iter().map(|&(r, _)| r).collect();
            assert_eq!(got_rows, want_rows);
            for (g, w) in got.iter().zip(&want) {
                assert!((g.1 - w.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn knn_is_scale_invariant() {
        let rows = random_rows(60, 6, 7);
        let store = store_from_rows(rows);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let scaled: Vec<f32> = q.iter().map(|&v| 3.0 * v).collect();
        let a: Vec<usize> = store.knn(&q, 10).unwrap().iter().map(|&(r, _)| r).collect();
        let b: Vec<usize> = store.knn(&scaled, 10).unwrap().iter().map(|&(r, _)| r).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn match_names_applies_threshold_boundary() {
        // Row vector (1,0); query at cosine 0.59 rejects, 0.60 accepts.
        let store = store_from_rows(vec![vec![1.0, 0.0]]);
        let q59 = vec![0.59f32, (1.0f32 - 0.59 * 0.59).sqrt()];
        let q60 = vec![0.60f32, 0.80f32];
        let results = match_names(
            &store,
            &[("q59".into(), q59), ("q60".into(), q60)],
            0.6,
        )
        .unwrap();
        assert_eq!(results[0].concept, None);
        assert!((results[0].similarity - 0.59).abs() < 1e-6);
        assert_eq!(results[0].matched_name_row, Some(0));
        assert_eq!(
            results[1].concept,
            Some(ConceptId::new("C000").unwrap())
        );
    }

    #[test]
    fn match_names_threshold_zero_always_assigns() {
        let store = store_from_rows(random_rows(20, 4, 3));
        let queries: Vec<(String, Vec<f32>)> = random_rows(10, 4, 4)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("q{i}"), v))
            .collect();
        let results = match_names(&store, &queries, 0.0).unwrap();
        assert!(results.iter().all(|r| r.concept.is_some()));
    }

    #[test]
    fn match_names_matches_seq_variant_and_oracle() {
        let rows = random_rows(50, 5, 9);
        let store = store_from_rows(rows.clone());
        let queries: Vec<(String, Vec<f32>)> = random_rows(20, 5, 10)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("q{i}"), v))
            .collect();
        let par = match_names(&store, &queries, 0.5).unwrap();
        let seq = match_names_seq(&store, &queries, 0.5).unwrap();
        assert_eq!(par, seq);
        for (r, (_, q)) in par.iter().zip(&queries) {
            let want = oracle_knn(&rows, q, 1)[0];
            assert_eq!(r.matched_name_row, Some(want.0));
            let want_concept = (want.1 >= 0.5).then(|| ConceptId::new(format!("C{:03}", want.0)).unwrap());
            assert_eq!(r.concept, want_concept);
        }
    }

    #[test]
    fn match_names_rejects_bad_threshold() {
        let store = store_from_rows(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            match_names(&store, &[], 1.5),
            Err(EmbeddingError::InvalidThreshold(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn knn_result_invariants(seed in 0u64..200, k in 1usize..20) {
            let rows = random_rows(30, 4, seed);
            let store = store_from_rows(rows);
            let q = vec![0.3f32, -0.2, 0.9, 0.1];
            let got = store.knn(&q, k).unwrap();
            proptest::prop_assert_eq!(got.len(), k.min(30));
            for w in got.windows(2) {
                proptest::prop_assert!(w[0].1 >= w[1].1);
            }
            for &(_, s) in &got {
                proptest::prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
