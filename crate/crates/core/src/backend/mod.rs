//! Service protocol for the teacher (generation) and student (prediction and
//! fine-tuning) models.
//!
//! Three JSON-over-HTTP endpoints:
//!
//! - `POST /v1/generate` `{prompt, sampling: {do_sample, temperature, top_k, top_p, max_length}, seed}` → `{text}`
//! - `POST /v1/predict` `{model, items: [{id, context, question}]}` → `{answers: [{id, text, start}]}`
//! - `POST /v1/train` `{base_model, stages: [{name, records_uri, epochs}], hyperparams: {learning_rate, batch_size, optimizer, scheduler}, validation_uri}` → `{model, steps, val: {f1, em}}`
//!
//! [`Backend`] is the raw transport. The free functions [`gen_text`],
//! [`predict`] and [`train`] wrap it with client-side batching and contract
//! checks, and are what the rest of the crate calls.

mod http;
mod mock;
mod retry;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::char_slice;
use crate::promptgen::SamplingConfig;
use crate::qametrics::MetricValue;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockScript};
pub use retry::{run_with_retry, AttemptError, RetryPolicy, TransientCause};

pub const DEFAULT_PREDICT_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{endpoint}: gave up after {attempts} attempt(s), last failure: {last}")]
    ExhaustedRetries {
        endpoint: String,
        attempts: u32,
        last: TransientCause,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("plan rejected: {0}")]
    Plan(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

/// Opaque name of a checkpoint held by the student backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelRef(String);

impl ModelRef {
    pub fn new(name: impl Into<String>) -> Result<Self, BackendError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(BackendError::Contract("empty model reference".into()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub auth_token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

// ---- wire types ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSampling {
    pub do_sample: bool,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_length: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub sampling: WireSampling,
    pub seed: u64,
}

impl GenerateRequest {
    pub fn new(prompt: impl Into<String>, sampling: &SamplingConfig) -> Self {
        Self {
            prompt: prompt.into(),
            sampling: WireSampling {
                do_sample: sampling.do_sample,
                temperature: sampling.temperature,
                top_k: sampling.top_k,
                top_p: sampling.top_p,
                max_length: sampling.max_length,
            },
            seed: sampling.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictItem {
    pub id: String,
    pub context: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub model: ModelRef,
    pub items: Vec<PredictItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedAnswer {
    pub id: String,
    pub text: String,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub answers: Vec<PredictedAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStage {
    pub name: String,
    pub records_uri: String,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub optimizer: String,
    pub scheduler: String,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 8,
            optimizer: "adamw".into(),
            scheduler: "linear".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub base_model: ModelRef,
    pub stages: Vec<TrainStage>,
    pub hyperparams: Hyperparams,
    pub validation_uri: String,
}

/// `val` is on the [0, 1] scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model: ModelRef,
    pub steps: u64,
    pub val: MetricValue,
}

/// Raw transport for the three endpoints. Implementations must be safe to
/// call from several threads at once.
pub trait Backend: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError>;
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError>;
    fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        (**self).generate(req)
    }
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError> {
        (**self).predict(req)
    }
    fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError> {
        (**self).train(req)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        (**self).generate(req)
    }
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError> {
        (**self).predict(req)
    }
    fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError> {
        (**self).train(req)
    }
}

/// Opens a backend from a URL: `http://host:port` for a live service or
/// `mock://<path to script.json>` for the scripted mock.
pub fn connect(endpoint: &BackendEndpoint) -> Result<Box<dyn Backend>, BackendError> {
    endpoint.validate()?;
    if let Some(path) = endpoint.base_url.strip_prefix("mock://") {
        let script = MockScript::load(Path::new(path))?;
        return Ok(Box::new(MockBackend::new(script)));
    }
    Ok(Box::new(HttpBackend::new(endpoint.clone())?))
}

// ---- client operations ----

pub fn gen_text(backend: &dyn Backend, prompt: &str, sampling: &SamplingConfig) -> Result<String, BackendError> {
    Ok(backend.generate(&GenerateRequest::new(prompt, sampling))?.text)
}

/// Span predictions for every item, in item order. Requests are split into
/// batches of `batch_size`; every response is checked for id agreement and
/// for the answer being the context substring at its offset.
pub fn predict(
    backend: &dyn Backend,
    model: &ModelRef,
    items: &[PredictItem],
    batch_size: usize,
) -> Result<Vec<PredictedAnswer>, BackendError> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let resp = backend.predict(&PredictRequest {
            model: model.clone(),
            items: chunk.to_vec(),
        })?;
        out.extend(match_answers(chunk, resp.answers)?);
    }
    Ok(out)
}

fn match_answers(items: &[PredictItem], answers: Vec<PredictedAnswer>) -> Result<Vec<PredictedAnswer>, BackendError> {
    if answers.len() != items.len() {
        return Err(BackendError::Contract(format!(
            "sent {} items, received {} answers",
            items.len(),
            answers.len()
        )));
    }
    let mut by_id: HashMap<String, PredictedAnswer> = HashMap::with_capacity(answers.len());
    for a in answers {
        let id = a.id.clone();
        if by_id.insert(id.clone(), a).is_some() {
            return Err(BackendError::Contract(format!("answer id `{id}` repeated")));
        }
    }
    items
        .iter()
        .map(|item| {
            let answer = by_id
                .remove(&item.id)
                .ok_or_else(|| BackendError::Contract(format!("no answer for id `{}`", item.id)))?;
            let len = answer.text.chars().count();
            if char_slice(&item.context, answer.start, len) != Some(answer.text.as_str()) {
                return Err(BackendError::Contract(format!(
                    "answer for `{}` is not the context substring at offset {}",
                    item.id, answer.start
                )));
            }
            Ok(answer)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelRef,
    pub steps: u64,
    pub validation: MetricValue,
}

pub fn train(backend: &dyn Backend, req: &TrainRequest) -> Result<TrainOutcome, BackendError> {
    if req.stages.is_empty() {
        return Err(BackendError::Plan("plan has no stages".into()));
    }
    if let Some(stage) = req.stages.iter().find(|s| s.epochs == 0) {
        return Err(BackendError::Plan(format!("stage `{}` has zero epochs", stage.name)));
    }
    let resp = backend.train(req)?;
    let in_range = |v: f64| (0.0..=1.0).contains(&v);
    if !in_range(resp.val.f1) || !in_range(resp.val.em) {
        return Err(BackendError::Contract(format!(
            "validation metrics out of [0, 1]: f1={} em={}",
            resp.val.f1, resp.val.em
        )));
    }
    ModelRef::new(resp.model.as_str())?;
    Ok(TrainOutcome {
        model: resp.model,
        steps: resp.steps,
        validation: resp.val,
    })
}
