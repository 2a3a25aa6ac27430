//! Record model and dataset plumbing.
//!
//! Offsets are always *character* offsets into the context (Unicode scalar
//! values), matching the convention of SQuAD-family JSON files.

mod jsonl;
mod ops;
mod span;
mod squad;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptgen::SamplingConfig;

pub use jsonl::{append_jsonl, read_jsonl, write_jsonl};
pub use ops::{dedup, dedup_key, read_subset_manifest, sample_subset, Subset, SubsetManifest};
pub use span::{char_find, char_len, char_slice};
pub use squad::{parse_squad, parse_squad_contexts, serialize_squad, ContextItem};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("answer span for qa `{id}` does not occur in its context")]
    Span { id: String },
    #[error("requested {requested} records but dataset has {available}")]
    Count { requested: usize, available: usize },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("invalid record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gold,
    Synthetic,
    Silver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset into the context. Synthetic answers carry none until
    /// they are validated.
    pub start: Option<usize>,
}

impl Answer {
    pub fn new(text: impl Into<String>, start: usize) -> Self {
        Self {
            text: text.into(),
            start: Some(start),
        }
    }

    pub fn unplaced(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            start: None,
        }
    }
}

/// Provenance of a synthetic record. Generation is a one-time step, so
/// `round_generated` is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub exemplar_id: String,
    pub sampling: SamplingConfig,
    pub raw_text: String,
    pub round_generated: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub lang: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub source: Source,
    pub gen_meta: Option<GenerationMeta>,
}

impl QaRecord {
    pub fn gold(
        id: impl Into<String>,
        lang: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        answers: Vec<Answer>,
    ) -> Self {
        Self {
            id: id.into(),
            lang: lang.into(),
            context: context.into(),
            question: question.into(),
            answers,
            source: Source::Gold,
            gen_meta: None,
        }
    }

    pub fn first_answer(&self) -> Option<&Answer> {
        self.answers.first()
    }

    /// Checks the record-level invariants: non-empty question and context,
    /// answers present for gold and silver records, and every placed answer
    /// matching the context at its offset.
    pub fn check(&self) -> Result<(), CorpusError> {
        let invalid = |message: &str| CorpusError::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.context.trim().is_empty() {
            return Err(invalid("empty context"));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        if self.answers.is_empty() && self.source != Source::Synthetic {
            return Err(invalid("no answers"));
        }
        for answer in &self.answers {
            if let Some(start) = answer.start {
                let len = char_len(&answer.text);
                if char_slice(&self.context, start, len) != Some(answer.text.as_str()) {
                    return Err(CorpusError::Span {
                        id: self.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn canonical_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

/// Summary of a dataset's contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub languages: BTreeMap<String, usize>,
    pub checksum: String,
}

/// An ordered collection of records with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Free-form description of where the records came from.
    pub source: String,
    records: Vec<QaRecord>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        source: impl Into<String>,
        records: Vec<QaRecord>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            source: source.into(),
            records,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            source: String::new(),
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[QaRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<QaRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn language_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for r in &self.records {
            *hist.entry(r.lang.clone()).or_insert(0) += 1;
        }
        hist
    }

    /// SHA-256 over the canonical serialization of every record, sorted by
    /// id. Independent of record order and of the platform.
    pub fn checksum(&self) -> String {
        let mut lines: Vec<(&str, String)> = self
            .records
            .iter()
            .map(|r| (r.id.as_str(), r.canonical_line()))
            .collect();
        lines.sort();
        let mut hasher = Sha256::new();
        for (_, line) in &lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            source: self.source.clone(),
            languages: self.language_histogram(),
            checksum: self.checksum(),
        }
    }
}

/// Demonstration records for 1-shot prompts in one language.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarPool {
    pub lang: String,
    exemplars: Vec<QaRecord>,
}

impl ExemplarPool {
    pub const DEFAULT_CAP: usize = 10;

    pub fn new(lang: impl Into<String>, exemplars: Vec<QaRecord>, cap: usize) -> Result<Self, CorpusError> {
        let lang = lang.into();
        if exemplars.is_empty() {
            return Err(CorpusError::Schema(format!("exemplar pool for `{lang}` is empty")));
        }
        if exemplars.len() > cap {
            return Err(CorpusError::Schema(format!(
                "exemplar pool for `{lang}` has {} records, cap is {cap}",
                exemplars.len()
            )));
        }
        for ex in &exemplars {
            if ex.first_answer().and_then(|a| a.start).is_none() {
                return Err(CorpusError::InvalidRecord {
                    id: ex.id.clone(),
                    message: "exemplar needs a placed gold answer".into(),
                });
            }
            ex.check()?;
        }
        Ok(Self { lang, exemplars })
    }

    /// Takes the first `cap` records of `ds` in file order.
    pub fn from_dataset(lang: impl Into<String>, ds: &Dataset, cap: usize) -> Result<Self, CorpusError> {
        let exemplars = ds.records().iter().take(cap).cloned().collect();
        Self::new(lang, exemplars, cap)
    }

    pub fn exemplars(&self) -> &[QaRecord] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

/// Loads a dataset by extension: `.jsonl` holds one [`QaRecord`] per line,
/// anything else is read as a SQuAD-format document. Every record is checked.
pub fn load_dataset(path: impl AsRef<Path>, default_lang: &str) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ds = if path.extension().is_some_and(|e| e == "jsonl") {
        Dataset::new(name.clone(), name, read_jsonl(path)?)?
    } else {
        parse_squad(&std::fs::read(path)?, default_lang, &name)?
    };
    for r in ds.records() {
        r.check()?;
    }
    Ok(ds)
}

/// Loads unlabeled contexts: `.jsonl` of [`ContextItem`], or the distinct
/// contexts of a SQuAD-format document.
pub fn load_contexts(path: impl AsRef<Path>, lang: &str) -> Result<Vec<ContextItem>, CorpusError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(path)
    } else {
        parse_squad_contexts(&std::fs::read(path)?, lang)
    }
}
