//! Post-processing checks for synthetic records and the weak-labeler
//! filter that grows the silver set round by round.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendError, ModelRef, PredictItem};
use crate::corpus::{char_find, QaRecord, Source};
use crate::qametrics::{self, NormalizationProfile};

#[derive(Debug, Error)]
pub enum CuratorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("candidate `{0}` is already in the silver store")]
    AlreadyAccepted(String),
    #[error("silver store rounds must not decrease: got round {got} after {last}")]
    RoundOrder { got: u32, last: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    NotSynthetic,
    EmptyQuestion,
    EmptyAnswer,
    AnswerNotInContext,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NotSynthetic => "not_synthetic",
            Self::EmptyQuestion => "empty_question",
            Self::EmptyAnswer => "empty_answer",
            Self::AnswerNotInContext => "answer_not_in_context",
        }
    }
}

/// Structural checks on a generated pair. On success the answer is placed at
/// the first occurrence of its text in the context.
pub fn validate_record(rec: &QaRecord) -> Result<QaRecord, RejectionReason> {
    if rec.source != Source::Synthetic {
        return Err(RejectionReason::NotSynthetic);
    }
    if rec.question.trim().is_empty() {
        return Err(RejectionReason::EmptyQuestion);
    }
    let Some(answer) = rec.first_answer().filter(|a| !a.text.trim().is_empty()) else {
        return Err(RejectionReason::EmptyAnswer);
    };
    let start = char_find(&rec.context, &answer.text).ok_or(RejectionReason::AnswerNotInContext)?;
    let mut out = rec.clone();
    out.answers.truncate(1);
    out.answers[0].start = Some(start);
    Ok(out)
}

/// Whether the labeler's answer counts as the same answer as the teacher's:
/// equal token sequences after normalization.
pub fn answers_match(pred: &str, gold: &str, lang: &str) -> bool {
    answers_match_with(pred, gold, lang, &NormalizationProfile::default())
}

pub fn answers_match_with(pred: &str, gold: &str, lang: &str, profile: &NormalizationProfile) -> bool {
    qametrics::normalize(pred, lang, profile) == qametrics::normalize(gold, lang, profile)
}

/// Accepted synthetic ids per language, stamped with the accepting round.
/// Ids are never removed or re-stamped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SilverStore {
    by_lang: BTreeMap<String, BTreeMap<String, u32>>,
    /// Insertion order, for stable iteration and the monotone-round check.
    order: Vec<(String, String, u32)>,
}

impl SilverStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_lang.values().any(|m| m.contains_key(id))
    }

    pub fn round_of(&self, id: &str) -> Option<u32> {
        self.by_lang.values().find_map(|m| m.get(id).copied())
    }

    pub fn count(&self, lang: &str) -> usize {
        self.by_lang.get(lang).map_or(0, BTreeMap::len)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn last_round(&self) -> Option<u32> {
        self.order.last().map(|(_, _, r)| *r)
    }

    /// Ids accepted in rounds `..= round`, in acceptance order.
    pub fn ids_through(&self, round: u32) -> Vec<&str> {
        self.order
            .iter()
            .filter(|(_, _, r)| *r <= round)
            .map(|(_, id, _)| id.as_str())
            .collect()
    }

    pub fn ids_for_lang(&self, lang: &str) -> Vec<&str> {
        self.order
            .iter()
            .filter(|(l, _, _)| l == lang)
            .map(|(_, id, _)| id.as_str())
            .collect()
    }

    /// Adds a batch atomically: either every record is inserted or none.
    pub fn insert_batch(&mut self, round: u32, records: &[QaRecord]) -> Result<(), CuratorError> {
        if let Some(last) = self.last_round() {
            if round < last {
                return Err(CuratorError::RoundOrder { got: round, last });
            }
        }
        let mut seen = HashSet::new();
        for r in records {
            if self.contains(&r.id) || !seen.insert(r.id.as_str()) {
                return Err(CuratorError::AlreadyAccepted(r.id.clone()));
            }
        }
        for r in records {
            self.by_lang.entry(r.lang.clone()).or_default().insert(r.id.clone(), round);
            self.order.push((r.lang.clone(), r.id.clone(), round));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub id: String,
    pub lang: String,
    pub round: u32,
    pub labeler_answer: String,
    pub labeler_start: usize,
    pub matched: bool,
    /// Token F1 of the labeler answer against the synthetic answer.
    pub match_score: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub profile: NormalizationProfile,
    /// 1.0 means normalized exact match; lower values accept on token F1.
    pub match_f1_threshold: f64,
    pub predict_batch: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            profile: NormalizationProfile::default(),
            match_f1_threshold: 1.0,
            predict_batch: backend::DEFAULT_PREDICT_BATCH,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterBatch {
    /// Newly accepted records (source set to silver), in candidate order.
    pub accepted: Vec<QaRecord>,
    /// One decision per candidate, in candidate order.
    pub decisions: Vec<FilterDecision>,
}

/// Re-answers every candidate with `labeler` and accepts the ones whose
/// answer agrees with the synthetic answer. Accepted ids are added to
/// `store` stamped with `round`; on any error the store is left untouched.
pub fn filter_round(
    candidates: &[QaRecord],
    labeler: &ModelRef,
    backend: &dyn Backend,
    store: &mut SilverStore,
    round: u32,
    opts: &FilterOptions,
) -> Result<FilterBatch, CuratorError> {
    if let Some(dup) = candidates.iter().find(|c| store.contains(&c.id)) {
        return Err(CuratorError::AlreadyAccepted(dup.id.clone()));
    }
    if candidates.is_empty() {
        return Ok(FilterBatch::default());
    }
    let items: Vec<PredictItem> = candidates
        .iter()
        .map(|c| PredictItem {
            id: c.id.clone(),
            context: c.context.clone(),
            question: c.question.clone(),
        })
        .collect();
    let predictions = backend::predict(backend, labeler, &items, opts.predict_batch)?;

    let mut batch = FilterBatch::default();
    for (cand, pred) in candidates.iter().zip(predictions) {
        let gold = cand.first_answer().map(|a| a.text.as_str()).unwrap_or("");
        let score = qametrics::f1(&pred.text, &[gold], &cand.lang, &opts.profile);
        let matched = if opts.match_f1_threshold >= 1.0 {
            answers_match_with(&pred.text, gold, &cand.lang, &opts.profile)
        } else {
            score >= opts.match_f1_threshold
        };
        if matched {
            let mut silver = cand.clone();
            silver.source = Source::Silver;
            batch.accepted.push(silver);
        }
        batch.decisions.push(FilterDecision {
            id: cand.id.clone(),
            lang: cand.lang.clone(),
            round,
            labeler_answer: pred.text,
            labeler_start: pred.start,
            matched,
            match_score: score,
        });
    }
    store.insert_batch(round, &batch.accepted)?;
    Ok(batch)
}
