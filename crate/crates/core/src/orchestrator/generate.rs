use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::OrchestratorError;
use crate::backend;
use crate::corpus::{load_contexts, load_dataset, write_jsonl, ExemplarPool};
use crate::promptgen::{generate_pairs, GenerateOptions, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageGeneration {
    pub lang: String,
    pub contexts: usize,
    pub records: usize,
    pub excluded: usize,
    pub output: PathBuf,
    pub exclusions: PathBuf,
}

/// `<dir>/<stem>.exclusions.jsonl` next to a synthetic output file.
pub fn exclusions_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.exclusions.jsonl"))
}

/// The one-time generation pass: one 1-shot request per context for every
/// configured language, written to `datasets.synthetic.<lang>` as JSONL.
/// Unusable continuations go to the sibling exclusions file.
pub fn run_generate(cfg: &RunConfig) -> Result<Vec<LanguageGeneration>, OrchestratorError> {
    cfg.validate_for_generate()?;
    let tmpl = match &cfg.template {
        Some(p) => PromptTemplate::load(cfg.resolve(p))?,
        None => PromptTemplate::default(),
    };
    let gen_cfg = cfg.backend.generate.as_ref().expect("validated");
    let teacher = backend::connect(&cfg.endpoint(gen_cfg))?;
    let opts = GenerateOptions {
        master_seed: cfg.seeds.master,
        concurrency: gen_cfg.concurrency.unwrap_or(GenerateOptions::default().concurrency),
    };

    let mut out = Vec::new();
    for lang in &cfg.languages {
        let contexts = load_contexts(cfg.resolve(&cfg.datasets.contexts[lang]), lang)?;
        let exemplars = load_dataset(cfg.resolve(&cfg.exemplars[lang]), lang)?;
        let pool = ExemplarPool::from_dataset(lang.clone(), &exemplars, ExemplarPool::DEFAULT_CAP)?;
        let batch = generate_pairs(&contexts, &pool, teacher.as_ref(), &tmpl, &opts)?;

        let output = cfg.resolve(&cfg.datasets.synthetic[lang]);
        if let Some(parent) = output.parent() {
            std::fs::create_dir_all(parent).map_err(crate::corpus::CorpusError::Io)?;
        }
        write_jsonl(&output, &batch.records)?;
        let exclusions = exclusions_path(&output);
        let excluded = batch.exclusions(lang);
        write_jsonl(&exclusions, &excluded)?;
        log::info!(
            "{lang}: {} contexts, {} synthetic records, {} unusable generations",
            contexts.len(),
            batch.records.len(),
            excluded.len()
        );
        out.push(LanguageGeneration {
            lang: lang.clone(),
            contexts: contexts.len(),
            records: batch.records.len(),
            excluded: excluded.len(),
            output,
            exclusions,
        });
    }
    Ok(out)
}
