//! Run-directory layout, state file and lock.
//!
//! ```text
//! <run_dir>/
//!   state.json              committed run state (atomic replace)
//!   .lock                   pid of the live orchestrator
//!   gold_subset.jsonl       gold records used by every pass
//!   gold_subset.manifest
//!   validation.jsonl
//!   candidates/<lang>.jsonl validated synthetic records
//!   eval/<name>.jsonl
//!   exclusions.jsonl        dedup and validation rejections
//!   round_<n>/              one committed round (renamed from round_<n>.tmp)
//!     accepted.jsonl decisions.jsonl plan.json metrics.json stages/*.jsonl
//!   report/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::Mode;
use super::stopping::StopReason;
use crate::backend::ModelRef;
use crate::qametrics::{MetricReport, MetricValue};

pub const STATE_FILE: &str = "state.json";
pub const LOCK_FILE: &str = ".lock";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("no run state in {0}")]
    Missing(PathBuf),
    #[error("corrupt run state {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("run directory {dir} is locked by live process {pid}")]
    Locked { dir: PathBuf, pid: u32 },
    #[error("run directory {0} already holds a run; pass --resume to continue it")]
    Exists(PathBuf),
    #[error("run directory {0} was created by a different config")]
    ConfigMismatch(PathBuf),
    #[error("journal io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCounts {
    /// From the plan formula.
    pub planned: u64,
    /// As reported by the backend.
    pub reported: u64,
}

/// One committed round. Round 0 is the gold-only baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    /// Model that labeled this round's candidates.
    pub labeler: Option<ModelRef>,
    pub new_batch: BTreeMap<String, usize>,
    pub silver_counts: BTreeMap<String, usize>,
    pub model: ModelRef,
    pub validation: MetricValue,
    pub eval: BTreeMap<String, MetricReport>,
    pub epochs: u32,
    pub step_budget: u64,
    pub steps: StepCounts,
    pub stop: Option<StopReason>,
    pub best: bool,
}

impl RoundState {
    pub fn new_batch_total(&self) -> usize {
        self.new_batch.values().sum()
    }

    pub fn silver_total(&self) -> usize {
        self.silver_counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// Synthetic records read from the configured files.
    pub generated: BTreeMap<String, usize>,
    pub duplicates: BTreeMap<String, usize>,
    /// Rejected by post-processing validation.
    pub rejected: BTreeMap<String, usize>,
    /// Candidates available to the filter.
    pub validated: BTreeMap<String, usize>,
    pub gold: usize,
    pub gold_checksum: String,
    pub validation: usize,
}

impl Totals {
    pub fn generated_total(&self) -> usize {
        self.generated.values().sum()
    }

    pub fn validated_total(&self) -> usize {
        self.validated.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Failed,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedRound {
    pub round: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub version: u32,
    pub mode: Mode,
    pub config_digest: String,
    pub languages: Vec<String>,
    pub stage_order: Vec<String>,
    pub totals: Totals,
    pub baseline: Option<RoundState>,
    pub rounds: Vec<RoundState>,
    pub status: RunStatus,
    pub stop: Option<StopReason>,
    pub best_round: Option<u32>,
    pub failed_round: Option<FailedRound>,
}

impl RunState {
    pub fn last_round(&self) -> Option<u32> {
        self.rounds.last().map(|r| r.round).or(self.baseline.as_ref().map(|b| b.round))
    }

    pub fn best(&self) -> Option<&RoundState> {
        let best = self.best_round?;
        self.rounds
            .iter()
            .chain(self.baseline.iter())
            .find(|r| r.round == best)
    }

    /// Every committed round including the baseline, in round order.
    pub fn all_rounds(&self) -> impl Iterator<Item = &RoundState> {
        self.baseline.iter().chain(self.rounds.iter())
    }
}

pub fn round_dir(run_dir: &Path, round: u32) -> PathBuf {
    run_dir.join(format!("round_{round}"))
}

pub fn staging_dir(run_dir: &Path, round: u32) -> PathBuf {
    run_dir.join(format!("round_{round}.tmp"))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JournalError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("journal types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_state(run_dir: &Path, state: &RunState) -> Result<(), JournalError> {
    write_atomic(&run_dir.join(STATE_FILE), &to_pretty_json(state))
}

pub fn read_state(run_dir: &Path) -> Result<RunState, JournalError> {
    let path = run_dir.join(STATE_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(JournalError::Missing(run_dir.to_path_buf())),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let state: RunState = serde_json::from_slice(&bytes).map_err(|e| JournalError::Corrupt {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if state.version != STATE_VERSION {
        return Err(JournalError::Corrupt {
            path,
            message: format!("unsupported state version {}", state.version),
        });
    }
    check_consistency(&state).map_err(|message| JournalError::Corrupt { path, message })?;
    Ok(state)
}

/// Structural checks a committed state must satisfy.
fn check_consistency(state: &RunState) -> Result<(), String> {
    let mut prev: BTreeMap<String, usize> = state.languages.iter().map(|l| (l.clone(), 0)).collect();
    for (expected_round, r) in (1..).zip(&state.rounds) {
        if r.round != expected_round {
            return Err(format!("round {} out of sequence (expected {expected_round})", r.round));
        }
        if state.mode == Mode::Gemquad {
            for lang in &state.languages {
                let before = prev.get(lang).copied().unwrap_or(0);
                let batch = r.new_batch.get(lang).copied().unwrap_or(0);
                let now = r.silver_counts.get(lang).copied().unwrap_or(0);
                if now != before + batch {
                    return Err(format!("round {}: silver count for {lang} is {now}, expected {}", r.round, before + batch));
                }
                prev.insert(lang.clone(), now);
            }
        }
    }
    if state.status == RunStatus::Completed && state.all_rounds().filter(|r| r.best).count() != 1 {
        return Err("completed run must mark exactly one best round".into());
    }
    Ok(())
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

impl RunLock {
    /// Takes the lock, reclaiming it when the recorded process is gone.
    pub fn acquire(run_dir: &Path) -> Result<Self, JournalError> {
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let path = run_dir.join(LOCK_FILE);
        let me = std::process::id();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(me.to_string().as_bytes()).map_err(io_err(&path))?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid != me && pid_alive(pid) => {
                            return Err(JournalError::Locked {
                                dir: run_dir.to_path_buf(),
                                pid,
                            })
                        }
                        _ => {
                            log::warn!("reclaiming stale lock in {}", run_dir.display());
                            fs::remove_file(&path).map_err(io_err(&path))?;
                        }
                    }
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> RunState {
        RunState {
            version: STATE_VERSION,
            mode: Mode::Gemquad,
            config_digest: "d".into(),
            languages: vec!["hi".into()],
            stage_order: vec!["hi".into()],
            totals: Totals {
                generated: BTreeMap::from([("hi".into(), 10)]),
                duplicates: BTreeMap::new(),
                rejected: BTreeMap::new(),
                validated: BTreeMap::from([("hi".into(), 10)]),
                gold: 5,
                gold_checksum: "c".into(),
                validation: 2,
            },
            baseline: None,
            rounds: vec![round(1, 4, 4), round(2, 2, 6)],
            status: RunStatus::Running,
            stop: None,
            best_round: None,
            failed_round: None,
        }
    }

    fn round(n: u32, batch: usize, count: usize) -> RoundState {
        RoundState {
            round: n,
            labeler: None,
            new_batch: BTreeMap::from([("hi".into(), batch)]),
            silver_counts: BTreeMap::from([("hi".into(), count)]),
            model: ModelRef::new(format!("m{n}")).unwrap(),
            validation: MetricValue::new(0.5, 0.4),
            eval: BTreeMap::new(),
            epochs: 1,
            step_budget: 1,
            steps: StepCounts { planned: 1, reported: 1 },
            stop: None,
            best: false,
        }
    }

    #[test]
    fn state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_state(dir.path(), &state()).unwrap();
        assert_eq!(read_state(dir.path()).unwrap(), state());
        assert!(!dir.path().join("state.tmp").exists());
    }

    #[test]
    fn missing_and_corrupt_state() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_state(dir.path()), Err(JournalError::Missing(_))));
        fs::write(dir.path().join(STATE_FILE), "{ not json").unwrap();
        assert!(matches!(read_state(dir.path()), Err(JournalError::Corrupt { .. })));
    }

    #[test]
    fn inconsistent_counts_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = state();
        s.rounds[1].silver_counts.insert("hi".into(), 7);
        write_state(dir.path(), &s).unwrap();
        assert!(matches!(read_state(dir.path()), Err(JournalError::Corrupt { .. })));
    }

    #[test]
    fn lock_is_exclusive_and_stale_locks_are_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        // Our own pid owns it; a second acquisition from the same process
        // treats it as reclaimable, so simulate another live holder with pid 1.
        drop(lock);
        fs::write(dir.path().join(LOCK_FILE), "1").unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(JournalError::Locked { pid: 1, .. })));
        fs::write(dir.path().join(LOCK_FILE), "4294967295").unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
    }
}
