use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::journal::{
    io_err, read_state, round_dir, staging_dir, to_pretty_json, write_atomic, write_state, FailedRound, JournalError,
    RoundState, RunLock, RunState, RunStatus, StepCounts, Totals, STATE_VERSION,
};
use super::plan::{default_step_budget, plan_training, TrainPlan, COMBINED_STAGE, GOLD_STAGE};
use super::report::emit_report;
use super::stopping::{select_best, should_stop, StopDecision, StopReason};
use super::OrchestratorError;
use crate::backend::{self, Backend, Hyperparams, ModelRef, PredictItem, TrainRequest, TrainStage};
use crate::corpus::{dedup, load_dataset, read_jsonl, sample_subset, write_jsonl, Dataset, QaRecord, Source};
use crate::curator::{filter_round, validate_record, FilterOptions, SilverStore};
use crate::promptgen::Exclusion;
use crate::qametrics::{evaluate, MetricReport, NormalizationProfile};

const GOLD_SUBSET: &str = "gold_subset.jsonl";
const GOLD_MANIFEST: &str = "gold_subset.manifest";
const VALIDATION: &str = "validation.jsonl";
const EXCLUSIONS: &str = "exclusions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    /// Return [`OrchestratorError::Interrupted`] without cleaning up.
    Interrupt,
    /// Abort the process.
    Abort,
}

/// Crash injection between a round's training call and its commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub after_train_round: u32,
    pub action: FaultAction,
}

impl Fault {
    /// Parses `after_train:<round>`.
    pub fn parse(spec: &str, action: FaultAction) -> Option<Self> {
        let round = spec.trim().strip_prefix("after_train:")?.parse().ok()?;
        Some(Self {
            after_train_round: round,
            action,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub fault: Option<Fault>,
}

/// Everything a round reads, loaded once per invocation.
struct Inputs {
    gold: Vec<QaRecord>,
    candidates: BTreeMap<String, Vec<QaRecord>>,
    eval: BTreeMap<String, Dataset>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    run_dir: PathBuf,
    student: Box<dyn Backend>,
    profile: NormalizationProfile,
    hyperparams: Hyperparams,
    step_budget: u64,
    fault: Option<Fault>,
}

/// Runs (or resumes) the configured mode to completion and writes the
/// report. The returned state is the final committed journal.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunState, OrchestratorError> {
    cfg.validate_for_run()?;
    let run_dir = cfg.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;

    let existing = match read_state(&run_dir) {
        Ok(s) => Some(s),
        Err(JournalError::Missing(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut state = match existing {
        Some(_) if !opts.resume => return Err(JournalError::Exists(run_dir).into()),
        Some(s) if s.config_digest != cfg.digest => return Err(JournalError::ConfigMismatch(run_dir).into()),
        Some(s) => {
            clear_uncommitted(&run_dir, &s)?;
            s
        }
        None => {
            clear_uncommitted(&run_dir, &empty_marker(cfg))?;
            initialize(cfg, &run_dir)?
        }
    };

    if state.status == RunStatus::Completed {
        emit_report(&run_dir)?;
        return Ok(state);
    }
    if state.failed_round.take().is_some() {
        state.status = RunStatus::Running;
        write_state(&run_dir, &state)?;
    }

    let inputs = load_inputs(&run_dir, &state)?;
    let student_cfg = cfg.backend.student.as_ref().expect("validated");
    let ctx = Ctx {
        cfg,
        run_dir: run_dir.clone(),
        student: backend::connect(&cfg.endpoint(student_cfg))?,
        profile: NormalizationProfile::load(&cfg.scoring.profile)?,
        hyperparams: Hyperparams {
            learning_rate: cfg.train.learning_rate,
            batch_size: cfg.train.batch_size,
            ..Hyperparams::default()
        },
        step_budget: cfg.train.step_budget.unwrap_or_else(|| {
            let syn: Vec<usize> = state.totals.validated.values().copied().collect();
            default_step_budget(&syn, inputs.gold.len(), cfg.train.batch_size)
        }),
        fault: opts.fault,
    };

    let result = drive(&ctx, &inputs, &mut state);
    if let Err(e) = &result {
        if !matches!(e, OrchestratorError::Interrupted { .. }) {
            let round = state.last_round().map_or(0, |r| r + 1);
            state.status = RunStatus::Failed;
            state.failed_round = Some(FailedRound {
                round,
                error: e.to_string(),
            });
            write_state(&run_dir, &state)?;
        }
    }
    result?;
    emit_report(&run_dir)?;
    Ok(state)
}

/// A state with no rounds, used to clear leftovers before a fresh start.
fn empty_marker(cfg: &RunConfig) -> RunState {
    RunState {
        version: STATE_VERSION,
        mode: cfg.mode,
        config_digest: cfg.digest.clone(),
        languages: cfg.languages.clone(),
        stage_order: cfg.stage_order.clone(),
        totals: Totals {
            generated: BTreeMap::new(),
            duplicates: BTreeMap::new(),
            rejected: BTreeMap::new(),
            validated: BTreeMap::new(),
            gold: 0,
            gold_checksum: String::new(),
            validation: 0,
        },
        baseline: None,
        rounds: Vec::new(),
        status: RunStatus::Running,
        stop: None,
        best_round: None,
        failed_round: None,
    }
}

/// Removes staging directories and round directories the state does not
/// reference (a crash after the rename but before the state write).
fn clear_uncommitted(run_dir: &Path, state: &RunState) -> Result<(), JournalError> {
    let committed: HashSet<String> = state.all_rounds().map(|r| format!("round_{}", r.round)).collect();
    let Ok(entries) = fs::read_dir(run_dir) else {
        return Ok(());
    };
    for entry in entries {
        let entry = entry.map_err(io_err(run_dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("round_") && !committed.contains(&name) {
            log::warn!("removing uncommitted {}", entry.path().display());
            fs::remove_dir_all(entry.path()).map_err(io_err(&entry.path()))?;
        }
    }
    Ok(())
}

fn initialize(cfg: &RunConfig, run_dir: &Path) -> Result<RunState, OrchestratorError> {
    let gold_all = load_dataset(cfg.resolve(cfg.datasets.gold.as_ref().expect("validated")), "en")?;
    let n = cfg.gold_subset_size.min(gold_all.len());
    if n < cfg.gold_subset_size {
        log::warn!("gold set has {} records, fewer than gold_subset_size {}", gold_all.len(), cfg.gold_subset_size);
    }
    let subset = sample_subset(&gold_all, n, cfg.seeds.master)?;
    write_jsonl(run_dir.join(GOLD_SUBSET), subset.dataset.records())?;
    write_atomic(&run_dir.join(GOLD_MANIFEST), subset.manifest.to_text().as_bytes())?;

    let validation = load_dataset(cfg.resolve(cfg.datasets.validation.as_ref().expect("validated")), "en")?;
    write_jsonl(run_dir.join(VALIDATION), validation.records())?;

    let eval_dir = run_dir.join("eval");
    fs::create_dir_all(&eval_dir).map_err(io_err(&eval_dir))?;
    for (name, entry) in &cfg.datasets.eval {
        let ds = load_dataset(cfg.resolve(entry.path()), entry.lang().unwrap_or("en"))?;
        write_jsonl(eval_dir.join(format!("{name}.jsonl")), ds.records())?;
    }

    let cand_dir = run_dir.join("candidates");
    fs::create_dir_all(&cand_dir).map_err(io_err(&cand_dir))?;
    let mut totals = Totals {
        generated: BTreeMap::new(),
        duplicates: BTreeMap::new(),
        rejected: BTreeMap::new(),
        validated: BTreeMap::new(),
        gold: subset.dataset.len(),
        gold_checksum: subset.dataset.checksum(),
        validation: validation.len(),
    };
    let mut exclusions = Vec::new();
    if cfg.mode.uses_synthetic() {
        for lang in &cfg.languages {
            let raw = load_dataset(cfg.resolve(&cfg.datasets.synthetic[lang]), lang)?;
            let (unique, removed) = dedup(&raw);
            let kept: HashSet<&str> = unique.records().iter().map(|r| r.id.as_str()).collect();
            for r in raw.records().iter().filter(|r| !kept.contains(r.id.as_str())) {
                exclusions.push(exclusion(r, lang, "dedup", "duplicate"));
            }
            let mut valid = Vec::new();
            let mut rejected = 0;
            for r in unique.records() {
                match validate_record(r) {
                    Ok(v) => valid.push(v),
                    Err(reason) => {
                        rejected += 1;
                        exclusions.push(exclusion(r, lang, "validation", reason.as_str()));
                    }
                }
            }
            log::info!(
                "{lang}: {} generated, {removed} duplicates, {rejected} rejected, {} candidates",
                raw.len(),
                valid.len()
            );
            write_jsonl(cand_dir.join(format!("{lang}.jsonl")), &valid)?;
            totals.generated.insert(lang.clone(), raw.len());
            totals.duplicates.insert(lang.clone(), removed);
            totals.rejected.insert(lang.clone(), rejected);
            totals.validated.insert(lang.clone(), valid.len());
        }
    }
    write_jsonl(run_dir.join(EXCLUSIONS), &exclusions)?;

    let mut state = empty_marker(cfg);
    state.totals = totals;
    write_state(run_dir, &state)?;
    Ok(state)
}

fn exclusion(r: &QaRecord, lang: &str, stage: &str, reason: &str) -> Exclusion {
    Exclusion {
        id: r.id.clone(),
        lang: lang.to_string(),
        stage: stage.into(),
        reason: reason.into(),
        raw_text: r.gen_meta.as_ref().map(|m| m.raw_text.clone()),
        question: Some(r.question.clone()),
        answer: r.first_answer().map(|a| a.text.clone()),
    }
}

fn load_inputs(run_dir: &Path, state: &RunState) -> Result<Inputs, OrchestratorError> {
    let gold: Vec<QaRecord> = read_jsonl(run_dir.join(GOLD_SUBSET))?;
    let checksum = Dataset::new("gold", "", gold.clone())?.checksum();
    if checksum != state.totals.gold_checksum {
        return Err(JournalError::Corrupt {
            path: run_dir.join(GOLD_SUBSET),
            message: "gold subset does not match the journaled checksum".into(),
        }
        .into());
    }
    let mut candidates = BTreeMap::new();
    for (lang, &n) in &state.totals.validated {
        let path = run_dir.join("candidates").join(format!("{lang}.jsonl"));
        let recs: Vec<QaRecord> = read_jsonl(&path)?;
        if recs.len() != n {
            return Err(JournalError::Corrupt {
                path,
                message: format!("expected {n} candidates, found {}", recs.len()),
            }
            .into());
        }
        candidates.insert(lang.clone(), recs);
    }
    let mut eval = BTreeMap::new();
    let eval_dir = run_dir.join("eval");
    if let Ok(entries) = fs::read_dir(&eval_dir) {
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            eval.insert(name.clone(), Dataset::new(name, "", read_jsonl(&p)?)?);
        }
    }
    Ok(Inputs { gold, candidates, eval })
}

/// Rebuilds the silver store from committed `accepted.jsonl` files and
/// checks it against the journaled counts.
fn rebuild_store(run_dir: &Path, state: &RunState) -> Result<SilverStore, OrchestratorError> {
    let mut store = SilverStore::new();
    for r in &state.rounds {
        let path = round_dir(run_dir, r.round).join("accepted.jsonl");
        let recs: Vec<QaRecord> = read_jsonl(&path)?;
        store.insert_batch(r.round, &recs)?;
        for (lang, &count) in &r.silver_counts {
            if store.count(lang) != count {
                return Err(JournalError::Corrupt {
                    path: path.clone(),
                    message: format!("silver count for {lang} is {}, journal says {count}", store.count(lang)),
                }
                .into());
            }
        }
    }
    Ok(store)
}

fn drive(ctx: &Ctx<'_>, inputs: &Inputs, state: &mut RunState) -> Result<(), OrchestratorError> {
    if ctx.cfg.mode != Mode::Gemquad {
        if state.rounds.is_empty() {
            single_pass(ctx, inputs, state)?;
        }
        return Ok(());
    }
    if state.baseline.is_none() {
        let rs = train_round(ctx, inputs, 0, Mode::Baseline, None, &stage_files_gold(inputs), BTreeMap::new(), BTreeMap::new())?;
        commit(ctx, state, rs, None)?;
    }
    let mut store = rebuild_store(&ctx.run_dir, state)?;
    loop {
        let round = state.rounds.len() as u32 + 1;
        let labeler = state
            .rounds
            .last()
            .or(state.baseline.as_ref())
            .map(|r| r.model.clone())
            .expect("baseline committed");

        let remaining: Vec<QaRecord> = ctx
            .cfg
            .stage_order
            .iter()
            .flat_map(|lang| inputs.candidates.get(lang).into_iter().flatten())
            .filter(|r| !store.contains(&r.id))
            .cloned()
            .collect();
        let filter_opts = FilterOptions {
            profile: ctx.profile.clone(),
            match_f1_threshold: ctx.cfg.filter.match_f1_threshold,
            predict_batch: ctx.cfg.filter.predict_batch,
        };
        let batch = filter_round(&remaining, &labeler, ctx.student.as_ref(), &mut store, round, &filter_opts)?;

        let staging = staging_dir(&ctx.run_dir, round);
        fs::create_dir_all(staging.join("stages")).map_err(io_err(&staging))?;
        write_jsonl(staging.join("accepted.jsonl"), &batch.accepted)?;
        write_jsonl(staging.join("decisions.jsonl"), &batch.decisions)?;

        let mut new_batch = BTreeMap::new();
        let mut silver_counts = BTreeMap::new();
        let mut stages = Vec::new();
        for lang in &ctx.cfg.stage_order {
            new_batch.insert(lang.clone(), batch.accepted.iter().filter(|r| &r.lang == lang).count());
            silver_counts.insert(lang.clone(), store.count(lang));
            let ids: HashSet<&str> = store.ids_for_lang(lang).into_iter().collect();
            let silver: Vec<QaRecord> = inputs
                .candidates
                .get(lang)
                .into_iter()
                .flatten()
                .filter(|r| ids.contains(r.id.as_str()))
                .map(as_silver)
                .collect();
            stages.push((lang.clone(), silver));
        }
        stages.push((GOLD_STAGE.to_string(), inputs.gold.clone()));

        let mut rs = train_round(ctx, inputs, round, Mode::Gemquad, Some(labeler), &stages, new_batch, silver_counts)?;
        let mut history = state.rounds.clone();
        history.push(rs.clone());
        let decision = should_stop(&history, &state.totals.generated, &ctx.cfg.criteria);
        let stop = match decision {
            StopDecision::Continue => None,
            StopDecision::Stop(reason) => Some(reason),
        };
        rs.stop = stop;
        commit(ctx, state, rs, stop)?;
        if stop.is_some() {
            return Ok(());
        }
    }
}

fn as_silver(r: &QaRecord) -> QaRecord {
    let mut r = r.clone();
    r.source = Source::Silver;
    r
}

fn stage_files_gold(inputs: &Inputs) -> Vec<(String, Vec<QaRecord>)> {
    vec![(GOLD_STAGE.to_string(), inputs.gold.clone())]
}

fn single_pass(ctx: &Ctx<'_>, inputs: &Inputs, state: &mut RunState) -> Result<(), OrchestratorError> {
    let mode = ctx.cfg.mode;
    let mut used = BTreeMap::new();
    let mut stages: Vec<(String, Vec<QaRecord>)> = Vec::new();
    if mode != Mode::Baseline {
        for lang in &ctx.cfg.stage_order {
            let recs = inputs.candidates.get(lang).cloned().unwrap_or_default();
            used.insert(lang.clone(), recs.len());
            stages.push((lang.clone(), recs));
        }
    }
    if mode == Mode::Combined {
        let mut mixed: Vec<QaRecord> = stages.drain(..).flat_map(|(_, r)| r).chain(inputs.gold.iter().cloned()).collect();
        mixed.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.cfg.seeds.master));
        stages.push((COMBINED_STAGE.to_string(), mixed));
    } else {
        stages.push((GOLD_STAGE.to_string(), inputs.gold.clone()));
    }
    let mut rs = train_round(ctx, inputs, 1, mode, None, &stages, used.clone(), used)?;
    rs.stop = Some(StopReason::SinglePass);
    commit(ctx, state, rs, Some(StopReason::SinglePass))
}

#[derive(Debug, Serialize, Deserialize)]
struct StageRef {
    name: String,
    records: usize,
    epochs: u32,
    /// Relative to the round directory.
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    round: u32,
    mode: Mode,
    stages: Vec<StageRef>,
    plan: TrainPlan,
    /// Relative to the run directory.
    validation: String,
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    round: u32,
    model: &'a ModelRef,
    validation: crate::qametrics::MetricValue,
    eval: &'a BTreeMap<String, MetricReport>,
    steps: &'a StepCounts,
}

fn file_uri(path: &Path) -> String {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    format!("file://{}", abs.display())
}

/// Materializes the stages, trains, scores the eval sets and writes the
/// round's plan and metrics into its staging directory.
#[allow(clippy::too_many_arguments)]
fn train_round(
    ctx: &Ctx<'_>,
    inputs: &Inputs,
    round: u32,
    mode: Mode,
    labeler: Option<ModelRef>,
    stages: &[(String, Vec<QaRecord>)],
    new_batch: BTreeMap<String, usize>,
    silver_counts: BTreeMap<String, usize>,
) -> Result<RoundState, OrchestratorError> {
    let staging = staging_dir(&ctx.run_dir, round);
    let stage_dir = staging.join("stages");
    fs::create_dir_all(&stage_dir).map_err(io_err(&stage_dir))?;

    let syn_sizes: Vec<(String, usize)> = stages
        .iter()
        .filter(|(name, _)| name != GOLD_STAGE && name != COMBINED_STAGE)
        .map(|(name, recs)| (name.clone(), recs.len()))
        .collect();
    let plan = if mode == Mode::Combined {
        let total = stages.iter().map(|(_, r)| r.len()).sum::<usize>() - inputs.gold.len();
        plan_training(mode, &[(COMBINED_STAGE.into(), total)], inputs.gold.len(), &ctx.hyperparams, ctx.step_budget)?
    } else {
        plan_training(mode, &syn_sizes, inputs.gold.len(), &ctx.hyperparams, ctx.step_budget)?
    };

    let by_name: BTreeMap<&str, &Vec<QaRecord>> = stages.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let mut refs = Vec::new();
    let mut train_stages = Vec::new();
    for stage in &plan.stages {
        let rel = format!("stages/{}.jsonl", stage.name);
        let path = staging.join(&rel);
        write_jsonl(&path, by_name[stage.name.as_str()])?;
        train_stages.push(TrainStage {
            name: stage.name.clone(),
            records_uri: file_uri(&path),
            epochs: stage.epochs,
        });
        refs.push(StageRef {
            name: stage.name.clone(),
            records: stage.records,
            epochs: stage.epochs,
            path: rel,
        });
    }
    let plan_file = PlanFile {
        round,
        mode,
        stages: refs,
        plan: plan.clone(),
        validation: VALIDATION.into(),
    };
    write_atomic(&staging.join("plan.json"), &to_pretty_json(&plan_file))?;

    let req = TrainRequest {
        base_model: ModelRef::new(ctx.cfg.base_model())?,
        stages: train_stages,
        hyperparams: ctx.hyperparams.clone(),
        validation_uri: file_uri(&ctx.run_dir.join(VALIDATION)),
    };
    let outcome = backend::train(ctx.student.as_ref(), &req)?;
    if outcome.steps != plan.planned_steps {
        log::warn!("round {round}: backend reported {} steps, plan has {}", outcome.steps, plan.planned_steps);
    }
    log::info!("round {round}: trained {} (validation F1/EM {})", outcome.model, outcome.validation.render());

    let mut eval = BTreeMap::new();
    for (name, ds) in &inputs.eval {
        eval.insert(name.clone(), score(ctx, &outcome.model, ds)?);
    }
    let steps = StepCounts {
        planned: plan.planned_steps,
        reported: outcome.steps,
    };
    let metrics = MetricsFile {
        round,
        model: &outcome.model,
        validation: outcome.validation,
        eval: &eval,
        steps: &steps,
    };
    write_atomic(&staging.join("metrics.json"), &to_pretty_json(&metrics))?;

    if let Some(fault) = ctx.fault.filter(|f| f.after_train_round == round) {
        match fault.action {
            FaultAction::Interrupt => return Err(OrchestratorError::Interrupted { round }),
            FaultAction::Abort => {
                log::error!("fault injection: aborting after training round {round}");
                std::process::abort();
            }
        }
    }

    Ok(RoundState {
        round,
        labeler,
        new_batch,
        silver_counts,
        model: outcome.model,
        validation: outcome.validation,
        eval,
        epochs: plan.epochs,
        step_budget: plan.step_budget,
        steps,
        stop: None,
        best: false,
    })
}

/// Predicts every record of `ds` with `model` and scores the predictions.
pub fn score_model(
    student: &dyn Backend,
    model: &ModelRef,
    ds: &Dataset,
    profile: &NormalizationProfile,
    averaging: crate::qametrics::Averaging,
    batch: usize,
) -> Result<MetricReport, OrchestratorError> {
    let items: Vec<PredictItem> = ds
        .records()
        .iter()
        .map(|r| PredictItem {
            id: r.id.clone(),
            context: r.context.clone(),
            question: r.question.clone(),
        })
        .collect();
    let answers = backend::predict(student, model, &items, batch)?;
    let predictions: BTreeMap<String, String> = answers.into_iter().map(|a| (a.id, a.text)).collect();
    Ok(evaluate(&predictions, ds, profile, &[], averaging))
}

fn score(ctx: &Ctx<'_>, model: &ModelRef, ds: &Dataset) -> Result<MetricReport, OrchestratorError> {
    score_model(
        ctx.student.as_ref(),
        model,
        ds,
        &ctx.profile,
        ctx.cfg.scoring.averaging,
        ctx.cfg.filter.predict_batch,
    )
}

/// Renames the staging directory into place, then records the round in
/// the state file. A crash between the two leaves an unreferenced round
/// directory, which resume deletes.
fn commit(ctx: &Ctx<'_>, state: &mut RunState, rs: RoundState, stop: Option<StopReason>) -> Result<(), OrchestratorError> {
    let round = rs.round;
    let staging = staging_dir(&ctx.run_dir, round);
    let target = round_dir(&ctx.run_dir, round);
    fs::rename(&staging, &target).map_err(io_err(&target))?;
    if round == 0 {
        state.baseline = Some(rs);
    } else {
        state.rounds.push(rs);
    }
    if let Some(reason) = stop {
        state.stop = Some(reason);
        state.status = RunStatus::Completed;
        state.best_round = select_best(&state.rounds);
        for r in &mut state.rounds {
            r.best = Some(r.round) == state.best_round;
        }
    }
    write_state(&ctx.run_dir, state)?;
    Ok(())
}
