use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, GenerateRequest, GenerateResponse, ModelRef, PredictRequest, PredictResponse,
    PredictedAnswer, TrainRequest, TrainResponse,
};
use crate::corpus::char_find;
use crate::qametrics::MetricValue;

/// Deterministic stand-in for the teacher and student services.
///
/// - generation: the prompt is routed to the scripted context whose text
///   occurs latest in it, and that context's continuation is returned
/// - prediction: model `mock-r<n>` has skill `skills[n]` (the last entry
///   repeats). An item is answered with its scripted answer iff its
///   difficulty is at most the skill; otherwise with the first three
///   whitespace tokens of the context. Unscripted ids have difficulty 1
/// - training: returns `mock-r<n>` where `n` is the largest `round_<n>`
///   appearing in the stage URIs (0 if none), the step count implied by the
///   stage files and batch size, and `validation[n]` (or `skills[n]` for
///   both F1 and EM when no validation series is scripted)
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    /// context id → context text, used to route generation prompts.
    pub contexts: BTreeMap<String, String>,
    /// context id → raw continuation.
    pub generations: BTreeMap<String, String>,
    pub skills: Vec<f64>,
    /// record id → difficulty in [0, 1].
    pub difficulty: BTreeMap<String, f64>,
    /// record id → the answer a skilled labeler gives.
    pub answers: BTreeMap<String, String>,
    pub validation: Vec<MetricValue>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("mock script {}: {e}", path.display())))?;
        let script: Self = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("mock script {}: {e}", path.display())))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.skills.windows(2).any(|w| w[1] < w[0]) {
            return Err(BackendError::Config("mock skill schedule must be non-decreasing".into()));
        }
        if let Some((id, d)) = self.difficulty.iter().find(|(_, d)| !(0.0..=1.0).contains(*d)) {
            return Err(BackendError::Config(format!("difficulty {d} for `{id}` outside [0, 1]")));
        }
        Ok(())
    }

    pub fn skill(&self, round: usize) -> Option<f64> {
        self.skills.get(round).or_else(|| self.skills.last()).copied()
    }

    pub fn model_name(round: usize) -> String {
        format!("mock-r{round}")
    }
}

fn round_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"round_(\d+)").expect("static pattern"))
}

fn model_round(model: &ModelRef) -> Option<usize> {
    model.as_str().strip_prefix("mock-r")?.parse().ok()
}

/// Character span of the first three whitespace-separated tokens.
fn leading_tokens(context: &str) -> (String, usize) {
    let mut start = None;
    let mut end = 0;
    let mut tokens = 0;
    let mut in_token = false;
    for (b, c) in context.char_indices() {
        if c.is_whitespace() {
            if in_token {
                tokens += 1;
                in_token = false;
                if tokens == 3 {
                    break;
                }
            }
        } else {
            if !in_token && start.is_none() {
                start = Some(b);
            }
            in_token = true;
            end = b + c.len_utf8();
        }
    }
    let start = start.unwrap_or(0);
    let text = context[start..end.max(start)].to_string();
    (text, context[..start].chars().count())
}

fn count_records(uri: &str) -> Result<u64, BackendError> {
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Protocol(format!("cannot read stage records {path}: {e}")))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count() as u64)
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        let best = self
            .script
            .contexts
            .iter()
            .filter_map(|(id, text)| req.prompt.rfind(text.as_str()).map(|pos| (pos, text.len(), id)))
            .max_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| b.2.cmp(a.2)));
        let Some((_, _, id)) = best else {
            return Err(BackendError::Protocol("prompt matches no scripted context".into()));
        };
        let text = self
            .script
            .generations
            .get(id)
            .ok_or_else(|| BackendError::Protocol(format!("no scripted continuation for `{id}`")))?;
        Ok(GenerateResponse { text: text.clone() })
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError> {
        let skill = model_round(&req.model).and_then(|r| self.script.skill(r));
        let answers = req
            .items
            .iter()
            .map(|item| {
                let difficulty = self.script.difficulty.get(&item.id).copied().unwrap_or(1.0);
                let correct = skill
                    .filter(|s| difficulty <= *s)
                    .and_then(|_| self.script.answers.get(&item.id))
                    .and_then(|a| char_find(&item.context, a).map(|start| (a.clone(), start)));
                let (text, start) = correct.unwrap_or_else(|| leading_tokens(&item.context));
                PredictedAnswer {
                    id: item.id.clone(),
                    text,
                    start,
                }
            })
            .collect();
        Ok(PredictResponse { answers })
    }

    fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError> {
        if req.stages.is_empty() {
            return Err(BackendError::Plan("plan has no stages".into()));
        }
        if req.hyperparams.batch_size == 0 {
            return Err(BackendError::Plan("batch_size must be positive".into()));
        }
        let round = req
            .stages
            .iter()
            .flat_map(|s| round_re().captures_iter(&s.records_uri))
            .filter_map(|c| c[1].parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        let batch = u64::from(req.hyperparams.batch_size);
        let mut steps = 0;
        for stage in &req.stages {
            steps += count_records(&stage.records_uri)?.div_ceil(batch) * u64::from(stage.epochs);
        }
        let val = match self.script.validation.get(round).or_else(|| self.script.validation.last()) {
            Some(v) => *v,
            None => {
                let s = self.script.skill(round).unwrap_or(0.0).clamp(0.0, 1.0);
                MetricValue::new(s, s)
            }
        };
        Ok(TrainResponse {
            model: ModelRef::new(MockScript::model_name(round))?,
            steps,
            val,
        })
    }
}
