use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::journal::{io_err, read_state, to_pretty_json, write_atomic, JournalError, RoundState, RunState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub rounds_md: PathBuf,
    pub rounds_csv: PathBuf,
    pub acceptance_csv: PathBuf,
    pub final_eval_md: PathBuf,
    pub summary_json: PathBuf,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    mode: &'a str,
    status: super::journal::RunStatus,
    stop: Option<&'a str>,
    stop_round: Option<u32>,
    best_round: Option<u32>,
    rounds: usize,
    generated_total: usize,
    validated_total: usize,
    silver_total: usize,
    first_round_share: Option<f64>,
    final_share: Option<f64>,
    best_validation: Option<crate::qametrics::MetricValue>,
}

fn share(n: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| n as f64 / total as f64)
}

fn note(r: &RoundState) -> String {
    let mut parts = Vec::new();
    if r.best {
        parts.push("best".to_string());
    }
    if let Some(stop) = r.stop {
        parts.push(format!("stop: {stop}"));
    }
    parts.join("; ")
}

fn rounds_md(state: &RunState) -> String {
    let langs = &state.stage_order;
    let mut out = String::from("# Rounds\n\n");
    let _ = writeln!(out, "mode: {}", state.mode.as_str());
    match (state.stop, state.rounds.last()) {
        (Some(stop), Some(last)) => {
            let _ = writeln!(out, "stopped: {stop} after round {}", last.round);
        }
        _ => {
            let _ = writeln!(out, "status: {:?}", state.status);
        }
    }
    if let Some(best) = state.best_round {
        let _ = writeln!(out, "best round: {best}");
    }
    let _ = writeln!(
        out,
        "synthetic pool: {} generated, {} validated candidates\n",
        state.totals.generated_total(),
        state.totals.validated_total()
    );

    out.push_str("| round |");
    for l in langs {
        let _ = write!(out, " {l} |");
    }
    out.push_str(" silver total | new batch | validation F1 / EM | steps planned / reported | epochs | note |\n|---|");
    out.push_str(&"---|".repeat(langs.len() + 6));
    out.push('\n');
    for r in state.all_rounds() {
        let label = if state.baseline.as_ref().is_some_and(|b| b.round == r.round) {
            format!("{} (baseline)", r.round)
        } else {
            r.round.to_string()
        };
        let _ = write!(out, "| {label} |");
        for l in langs {
            let _ = write!(out, " {} |", r.silver_counts.get(l).copied().unwrap_or(0));
        }
        let _ = writeln!(
            out,
            " {} | {} | {} | {} / {} | {} | {} |",
            r.silver_total(),
            r.new_batch_total(),
            r.validation.render(),
            r.steps.planned,
            r.steps.reported,
            r.epochs,
            note(r)
        );
    }
    out
}

fn rounds_csv(state: &RunState) -> String {
    let langs = &state.stage_order;
    let mut out = String::from("round");
    for l in langs {
        let _ = write!(out, ",{l}_silver,{l}_new");
    }
    out.push_str(",silver_total,new_batch,val_f1,val_em,steps_planned,steps_reported,epochs,best,stop\n");
    for r in state.all_rounds() {
        let _ = write!(out, "{}", r.round);
        for l in langs {
            let _ = write!(
                out,
                ",{},{}",
                r.silver_counts.get(l).copied().unwrap_or(0),
                r.new_batch.get(l).copied().unwrap_or(0)
            );
        }
        let _ = writeln!(
            out,
            ",{},{},{:.6},{:.6},{},{},{},{},{}",
            r.silver_total(),
            r.new_batch_total(),
            r.validation.f1,
            r.validation.em,
            r.steps.planned,
            r.steps.reported,
            r.epochs,
            r.best,
            r.stop.map(|s| s.as_str()).unwrap_or("")
        );
    }
    out
}

/// Cumulative accepted records per round, for plotting acceptance curves.
fn acceptance_csv(state: &RunState) -> String {
    let langs = &state.stage_order;
    let validated = state.totals.validated_total();
    let mut out = String::from("round");
    for l in langs {
        let _ = write!(out, ",{l}");
    }
    out.push_str(",cumulative,batch,share_of_validated\n");
    for r in &state.rounds {
        let _ = write!(out, "{}", r.round);
        for l in langs {
            let _ = write!(out, ",{}", r.silver_counts.get(l).copied().unwrap_or(0));
        }
        let _ = writeln!(
            out,
            ",{},{},{:.4}",
            r.silver_total(),
            r.new_batch_total(),
            share(r.silver_total(), validated).unwrap_or(0.0)
        );
    }
    out
}

fn final_eval_md(state: &RunState) -> String {
    let mut out = String::from("# Final evaluation\n\n");
    let Some(best) = state.best() else {
        out.push_str("No best round selected yet.\n");
        return out;
    };
    let _ = writeln!(
        out,
        "best round {} ({}), validation F1 / EM {}\n",
        best.round,
        best.model,
        best.validation.render()
    );
    if best.eval.is_empty() {
        out.push_str("No evaluation sets configured.\n");
        return out;
    }
    for (name, report) in &best.eval {
        let _ = writeln!(out, "## {name}\n");
        out.push_str(&report.render_table());
        if let Some(base) = state.baseline.as_ref().and_then(|b| b.eval.get(name)) {
            let _ = writeln!(out, "\nbaseline (round 0) average: {}", base.average.render());
        }
        out.push('\n');
    }
    out
}

/// Writes the report files under `<run_dir>/report/` from the committed
/// state.
pub fn emit_report(run_dir: &Path) -> Result<ReportFiles, JournalError> {
    let state = read_state(run_dir)?;
    let dir = run_dir.join("report");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let files = ReportFiles {
        rounds_md: dir.join("rounds.md"),
        rounds_csv: dir.join("rounds.csv"),
        acceptance_csv: dir.join("acceptance.csv"),
        final_eval_md: dir.join("final_eval.md"),
        summary_json: dir.join("summary.json"),
    };
    write_atomic(&files.rounds_md, rounds_md(&state).as_bytes())?;
    write_atomic(&files.rounds_csv, rounds_csv(&state).as_bytes())?;
    write_atomic(&files.acceptance_csv, acceptance_csv(&state).as_bytes())?;
    write_atomic(&files.final_eval_md, final_eval_md(&state).as_bytes())?;

    let validated = state.totals.validated_total();
    let silver = state.rounds.last().map_or(0, RoundState::silver_total);
    let summary = Summary {
        mode: state.mode.as_str(),
        status: state.status,
        stop: state.stop.map(|s| s.as_str()),
        stop_round: state.stop.and(state.rounds.last().map(|r| r.round)),
        best_round: state.best_round,
        rounds: state.rounds.len(),
        generated_total: state.totals.generated_total(),
        validated_total: validated,
        silver_total: silver,
        first_round_share: state.rounds.first().and_then(|r| share(r.silver_total(), validated)),
        final_share: share(silver, validated),
        best_validation: state.best().map(|b| b.validation),
    };
    write_atomic(&files.summary_json, &to_pretty_json(&summary))?;
    Ok(files)
}
