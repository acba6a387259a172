//! Passage corpora and recognizer prediction files.
//!
//! Corpus JSONL: `{"id": str, "text": str, "gold": [concept ids]}`.
//! Predictions JSONL: `{"passage_id": str, "predicted_indices": ["0-1-3", ..]}`.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ConceptId;
use crate::tree::ConceptIndex;

/// A passage with its gold concept set (empty for unlabeled passages).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPassage {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub gold: BTreeSet<ConceptId>,
}

/// Raw recognizer output for one passage. Indices are digit sequences and
/// may be undecodable under a given tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub passage_id: String,
    #[serde(rename = "predicted_indices")]
    pub predicted: Vec<ConceptIndex>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate passage id {id:?}")]
    DuplicatePassage { id: String, line: usize },
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, item));
    }
    Ok(out)
}

/// Reads a corpus, enforcing unique passage ids.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedPassage>, CorpusError> {
    read_corpus_reader(BufReader::new(File::open(path.as_ref())?))
}

pub fn read_corpus_reader(reader: impl BufRead) -> Result<Vec<AnnotatedPassage>, CorpusError> {
    let rows = read_jsonl::<AnnotatedPassage>(reader)?;
    let mut seen = HashSet::new();
    for (line, p) in &rows {
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicatePassage {
                id: p.id.clone(),
                line: *line,
            });
        }
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn write_corpus<W: Write>(
    passages: &[AnnotatedPassage],
    mut w: W,
) -> Result<(), CorpusError> {
    for p in passages {
        let line = serde_json::to_string(p).expect("passage serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads prediction records; multiple records for one passage are allowed
/// and merged by consumers.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, CorpusError> {
    read_predictions_reader(BufReader::new(File::open(path.as_ref())?))
}

pub fn read_predictions_reader(
    reader: impl BufRead,
) -> Result<Vec<PredictionRecord>, CorpusError> {
    Ok(read_jsonl::<PredictionRecord>(reader)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

pub fn write_predictions<W: Write>(
    records: &[PredictionRecord],
    mut w: W,
) -> Result<(), CorpusError> {
    for r in records {
        let line = serde_json::to_string(r).expect("prediction serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}
