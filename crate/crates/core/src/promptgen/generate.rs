use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::{build_prompt, parse_generation, GenerationOutcome, PromptTemplate};
use super::{derive_seed, draw_sampling_config, SamplingConfig, TemplateError};
use crate::backend::{gen_text, Backend, BackendError};
use crate::corpus::{Answer, ContextItem, ExemplarPool, GenerationMeta, QaRecord, Source};

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub master_seed: u64,
    /// Upper bound on in-flight backend requests.
    pub concurrency: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            concurrency: 4,
        }
    }
}

/// A record or generation left out of the pipeline, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub lang: String,
    /// `parse` for unusable continuations, `validation` for post-processing
    /// rejections.
    pub stage: String,
    pub reason: String,
    pub raw_text: Option<String>,
    pub question: Option<String>,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationBatch {
    /// Successfully parsed pairs, in input context order.
    pub records: Vec<QaRecord>,
    /// One outcome per attempted context, in input context order.
    pub outcomes: Vec<GenerationOutcome>,
}

impl GenerationBatch {
    pub fn exclusions(&self, lang: &str) -> Vec<Exclusion> {
        self.outcomes
            .iter()
            .filter_map(|o| {
                o.failure().map(|reason| Exclusion {
                    id: o.context_id.clone(),
                    lang: lang.to_string(),
                    stage: "parse".into(),
                    reason: reason.as_str().into(),
                    raw_text: Some(o.raw_text.clone()),
                    question: None,
                    answer: None,
                })
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("generation aborted at context `{context_id}`: {source}")]
    Backend {
        context_id: String,
        #[source]
        source: BackendError,
        /// Everything that completed before the abort.
        partial: Box<GenerationBatch>,
    },
}

/// Id of the synthetic record generated from a context.
pub fn synthetic_id(context_id: &str) -> String {
    format!("{context_id}-q0")
}

struct Job<'a> {
    context: &'a ContextItem,
    exemplar: &'a QaRecord,
    sampling: SamplingConfig,
}

/// One generation call per context against `backend`.
///
/// All randomness (exemplar choice and sampling settings) is drawn per
/// context from a seed derived from `(master_seed, context id)` before any
/// request is sent, so results do not depend on scheduling.
pub fn generate_pairs(
    contexts: &[ContextItem],
    pool: &ExemplarPool,
    backend: &dyn Backend,
    tmpl: &PromptTemplate,
    opts: &GenerateOptions,
) -> Result<GenerationBatch, GenerateError> {
    tmpl.check()?;
    let jobs: Vec<Job<'_>> = contexts
        .iter()
        .map(|context| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, &context.id));
            let exemplar = &pool.exemplars()[rng.random_range(0..pool.len())];
            Job {
                context,
                exemplar,
                sampling: draw_sampling_config(&mut rng),
            }
        })
        .collect();

    let slots: Vec<Mutex<Option<Result<String, BackendError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = opts.concurrency.clamp(1, jobs.len().max(1));

    let mut prompts = Vec::with_capacity(jobs.len());
    for job in &jobs {
        prompts.push(build_prompt(tmpl, job.exemplar, &job.context.text)?);
    }

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let result = gen_text(backend, &prompts[i], &jobs[i].sampling);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().expect("slot lock poisoned") = Some(result);
            });
        }
    });

    let mut batch = GenerationBatch::default();
    let mut first_error = None;
    for (job, slot) in jobs.iter().zip(slots) {
        match slot.into_inner().expect("slot lock poisoned") {
            None => {}
            Some(Err(e)) => {
                if first_error.is_none() {
                    first_error = Some((job.context.id.clone(), e));
                }
            }
            Some(Ok(raw)) => {
                let outcome = to_outcome(job, raw, tmpl);
                if let Some((question, answer)) = outcome.pair() {
                    batch.records.push(QaRecord {
                        id: synthetic_id(&job.context.id),
                        lang: job.context.lang.clone(),
                        context: job.context.text.clone(),
                        question: question.to_string(),
                        answers: vec![Answer::unplaced(answer)],
                        source: Source::Synthetic,
                        gen_meta: Some(GenerationMeta {
                            exemplar_id: job.exemplar.id.clone(),
                            sampling: job.sampling.clone(),
                            raw_text: outcome.raw_text.clone(),
                            round_generated: 0,
                        }),
                    });
                } else if let Some(reason) = outcome.failure() {
                    log::info!("context `{}`: unusable generation ({})", job.context.id, reason.as_str());
                }
                batch.outcomes.push(outcome);
            }
        }
    }

    match first_error {
        Some((context_id, source)) => Err(GenerateError::Backend {
            context_id,
            source,
            partial: Box::new(batch),
        }),
        None => Ok(batch),
    }
}

fn to_outcome(job: &Job<'_>, raw: String, tmpl: &PromptTemplate) -> GenerationOutcome {
    // The prompt already ends with the question label, so continuations
    // usually start with the question text itself.
    let result = if raw.trim_start().starts_with(&tmpl.label_question) {
        parse_generation(&raw, tmpl)
    } else {
        parse_generation(&format!("{} {}", tmpl.label_question, raw), tmpl)
    };
    GenerationOutcome {
        context_id: job.context.id.clone(),
        raw_text: raw,
        result,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GenerateRequest, GenerateResponse, MockBackend, MockScript, PredictRequest, PredictResponse, TrainRequest, TrainResponse};
    use crate::promptgen::FailureReason;

    fn pool() -> ExemplarPool {
        let ex = |i: usize| {
            QaRecord::gold(
                format!("xq-{i}"),
                "es",
                format!("Ejemplo {i} habla de Toledo."),
                "¿De qué ciudad habla?",
                vec![Answer::new("Toledo", 19 + i.to_string().len() - 1)],
            )
        };
        ExemplarPool::new("es", (0..10).map(ex).collect(), 10).unwrap()
    }

    fn fixture(n: usize, malformed: &[usize]) -> (Vec<ContextItem>, MockScript) {
        let mut script = MockScript::default();
        let contexts: Vec<ContextItem> = (0..n)
            .map(|i| {
                let id = format!("es-c{i:05}");
                let text = format!("El documento {i} describe la villa Pueblo{i} del norte.");
                script.contexts.insert(id.clone(), text.clone());
                let continuation = if malformed.contains(&i) {
                    format!(" ¿Qué villa describe el documento {i}?")
                } else {
                    format!(" ¿Qué villa describe el documento {i}?\nAnswer: Pueblo{i}")
                };
                script.generations.insert(id.clone(), continuation);
                ContextItem { id, lang: "es".into(), text }
            })
            .collect();
        (contexts, script)
    }

    #[test]
    fn well_formed_mock_yields_one_record_per_context() {
        let (contexts, script) = fixture(10, &[]);
        let mock = MockBackend::new(script);
        let opts = GenerateOptions { master_seed: 3, concurrency: 3 };
        let batch = generate_pairs(&contexts, &pool(), &mock, &PromptTemplate::default(), &opts).unwrap();
        assert_eq!(batch.records.len(), 10);
        let pool_ids: Vec<_> = pool().exemplars().iter().map(|e| e.id.clone()).collect();
        for (i, r) in batch.records.iter().enumerate() {
            assert_eq!(r.id, synthetic_id(&contexts[i].id));
            assert_eq!(r.answers[0].text, format!("Pueblo{i}"));
            assert_eq!(r.source, Source::Synthetic);
            let meta = r.gen_meta.as_ref().unwrap();
            assert!(pool_ids.contains(&meta.exemplar_id));
            assert!(meta.sampling.is_valid());
            assert_eq!(meta.round_generated, 0);
        }
    }

    #[test]
    fn malformed_continuation_is_logged_not_emitted() {
        let (contexts, script) = fixture(10, &[4]);
        let mock = MockBackend::new(script);
        let batch = generate_pairs(&contexts, &pool(), &mock, &PromptTemplate::default(), &GenerateOptions::default()).unwrap();
        assert_eq!(batch.records.len(), 9);
        assert_eq!(batch.outcomes.len(), 10);
        let excl = batch.exclusions("es");
        assert_eq!(excl.len(), 1);
        assert_eq!(excl[0].id, "es-c00004");
        assert_eq!(excl[0].reason, "no_answer_marker");
        assert_eq!(batch.outcomes[4].failure(), Some(FailureReason::NoAnswerMarker));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let mock = MockBackend::new(MockScript::default());
        let batch = generate_pairs(&[], &pool(), &mock, &PromptTemplate::default(), &GenerateOptions::default()).unwrap();
        assert!(batch.records.is_empty() && batch.outcomes.is_empty());
    }

    #[test]
    fn output_does_not_depend_on_concurrency() {
        let (contexts, script) = fixture(25, &[3, 17]);
        let mock = MockBackend::new(script);
        let run = |concurrency| {
            let opts = GenerateOptions { master_seed: 11, concurrency };
            generate_pairs(&contexts, &pool(), &mock, &PromptTemplate::default(), &opts).unwrap()
        };
        assert_eq!(run(1), run(8));
    }

    struct FailsAt {
        inner: MockBackend,
        poison: String,
    }

    impl Backend for FailsAt {
        fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
            if req.prompt.ends_with(&format!("{}\nQuestion:", self.poison)) {
                return Err(BackendError::Protocol("boom".into()));
            }
            self.inner.generate(req)
        }
        fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError> {
            self.inner.predict(req)
        }
        fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError> {
            self.inner.train(req)
        }
    }

    #[test]
    fn backend_failure_aborts_with_partial_results() {
        let (contexts, script) = fixture(6, &[]);
        let backend = FailsAt {
            inner: MockBackend::new(script),
            poison: contexts[3].text.clone(),
        };
        let opts = GenerateOptions { master_seed: 1, concurrency: 1 };
        let err = generate_pairs(&contexts, &pool(), &backend, &PromptTemplate::default(), &opts).unwrap_err();
        let GenerateError::Backend { context_id, partial, .. } = err else {
            panic!("expected backend error");
        };
        assert_eq!(context_id, "es-c00003");
        let ids: Vec<_> = partial.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["es-c00000-q0", "es-c00001-q0", "es-c00002-q0"]);
    }
}
