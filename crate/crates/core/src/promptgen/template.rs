use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QaRecord;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template field `{0}` must not be empty")]
    EmptyLabel(&'static str),
    #[error("exemplar `{0}` has no answer")]
    ExemplarWithoutAnswer(String),
    #[error("cannot read template: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse template: {0}")]
    Parse(String),
}

/// Rendering strings for a 1-shot prompt. Every string is configurable;
/// the defaults use English labels.
///
/// Rendered layout (with the default separators):
///
/// ```text
/// [CLM] <instruction>
/// Context: <exemplar context>
/// Question: <exemplar question>
/// Answer: <exemplar answer>
///
/// Context: <test context>
/// Question:
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub cl_token: String,
    pub instruction: String,
    pub label_context: String,
    pub label_question: String,
    pub label_answer: String,
    /// Between fields of one example.
    pub field_separator: String,
    /// Between the demonstration and the test example.
    pub example_separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            cl_token: "[CLM]".into(),
            instruction: "Read the Context and write a Question about it together with its Answer. \
                          Both the Question and the Answer must come from the Context."
                .into(),
            label_context: "Context:".into(),
            label_question: "Question:".into(),
            label_answer: "Answer:".into(),
            field_separator: "\n".into(),
            example_separator: "\n\n".into(),
        }
    }
}

impl PromptTemplate {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let tmpl: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| TemplateError::Parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| TemplateError::Parse(e.to_string()))?
        };
        tmpl.check()?;
        Ok(tmpl)
    }

    pub fn check(&self) -> Result<(), TemplateError> {
        let fields = [
            ("cl_token", &self.cl_token),
            ("instruction", &self.instruction),
            ("label_context", &self.label_context),
            ("label_question", &self.label_question),
            ("label_answer", &self.label_answer),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(TemplateError::EmptyLabel(name));
            }
        }
        Ok(())
    }
}

/// Renders the 1-shot prompt. The output ends with the question label so
/// the model continues with a question and then an answer.
pub fn build_prompt(tmpl: &PromptTemplate, exemplar: &QaRecord, test_context: &str) -> Result<String, TemplateError> {
    tmpl.check()?;
    let answer = exemplar
        .first_answer()
        .filter(|a| !a.text.trim().is_empty())
        .ok_or_else(|| TemplateError::ExemplarWithoutAnswer(exemplar.id.clone()))?;
    let sep = &tmpl.field_separator;
    Ok(format!(
        "{cl} {instruction}{sep}\
         {lc} {ex_ctx}{sep}{lq} {ex_q}{sep}{la} {ex_a}{example_sep}\
         {lc} {test}{sep}{lq}",
        cl = tmpl.cl_token,
        instruction = tmpl.instruction,
        lc = tmpl.label_context,
        lq = tmpl.label_question,
        la = tmpl.label_answer,
        ex_ctx = exemplar.context,
        ex_q = exemplar.question,
        ex_a = answer.text,
        example_sep = tmpl.example_separator,
        test = test_context,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoQuestionMarker,
    NoAnswerMarker,
    EmptyField,
    /// The text stops partway through the answer label.
    Truncated,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NoQuestionMarker => "no_question_marker",
            Self::NoAnswerMarker => "no_answer_marker",
            Self::EmptyField => "empty_field",
            Self::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedGeneration {
    Pair { question: String, answer: String },
    Failed(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub context_id: String,
    pub raw_text: String,
    pub result: ParsedGeneration,
}

impl GenerationOutcome {
    pub fn pair(&self) -> Option<(&str, &str)> {
        match &self.result {
            ParsedGeneration::Pair { question, answer } => Some((question, answer)),
            ParsedGeneration::Failed(_) => None,
        }
    }

    pub fn failure(&self) -> Option<FailureReason> {
        match self.result {
            ParsedGeneration::Failed(r) => Some(r),
            ParsedGeneration::Pair { .. } => None,
        }
    }
}

/// Splits `Question: <q> Answer: <a>` on the template labels.
///
/// The answer ends at the first line break or at the next context/question
/// label, whichever comes first; models often keep generating further
/// examples after the one we asked for.
pub fn parse_generation(raw: &str, tmpl: &PromptTemplate) -> ParsedGeneration {
    let Some(q_at) = raw.find(&tmpl.label_question) else {
        return ParsedGeneration::Failed(FailureReason::NoQuestionMarker);
    };
    let after_q = &raw[q_at + tmpl.label_question.len()..];
    let Some(a_at) = after_q.find(&tmpl.label_answer) else {
        let tail = after_q.trim_end();
        let partial = (1..tmpl.label_answer.len())
            .filter(|&n| tmpl.label_answer.is_char_boundary(n))
            .any(|n| tail.ends_with(&tmpl.label_answer[..n]));
        return ParsedGeneration::Failed(if partial {
            FailureReason::Truncated
        } else {
            FailureReason::NoAnswerMarker
        });
    };
    let question = after_q[..a_at].trim();
    let mut answer = &after_q[a_at + tmpl.label_answer.len()..];
    for stop in ["\n", tmpl.label_context.as_str(), tmpl.label_question.as_str()] {
        if let Some(i) = answer.find(stop) {
            answer = &answer[..i];
        }
    }
    let answer = answer.trim();
    if question.is_empty() || answer.is_empty() {
        return ParsedGeneration::Failed(FailureReason::EmptyField);
    }
    ParsedGeneration::Pair {
        question: question.to_string(),
        answer: answer.to_string(),
    }
}
