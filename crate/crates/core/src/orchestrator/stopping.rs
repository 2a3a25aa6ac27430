use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{ImprovementBaseline, StoppingCriteria, VolumeRule};
use super::journal::RoundState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `k` consecutive rounds without an improvement above `e`.
    Patience,
    /// The new batch fell below `v` of the synthetic pool.
    Volume,
    MaxRounds,
    /// Non-iterative modes train exactly once.
    SinglePass,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Patience => "patience",
            Self::Volume => "volume",
            Self::MaxRounds => "max_rounds",
            Self::SinglePass => "single_pass",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Number of trailing consecutive rounds whose validation F1 did not beat
/// the reference by more than `e`. The first round always counts as an
/// improvement.
pub fn non_improving_streak(f1s: &[f64], e: f64, baseline: ImprovementBaseline) -> u32 {
    let mut streak = 0;
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for &f1 in f1s {
        let reference = match baseline {
            ImprovementBaseline::Best => best,
            ImprovementBaseline::Previous => prev,
        };
        if reference == f64::NEG_INFINITY || f1 > reference + e {
            streak = 0;
        } else {
            streak += 1;
        }
        best = best.max(f1);
        prev = f1;
    }
    streak
}

/// Decision after the last round in `history` (rounds 1.., not the
/// baseline). `generated` is the synthetic pool size per language.
///
/// Checked in order: patience, volume, round cap.
pub fn should_stop(history: &[RoundState], generated: &BTreeMap<String, usize>, crit: &StoppingCriteria) -> StopDecision {
    let Some(last) = history.last() else {
        return StopDecision::Continue;
    };
    let f1s: Vec<f64> = history.iter().map(|r| r.validation.f1).collect();
    if non_improving_streak(&f1s, crit.e, crit.improvement_baseline) >= crit.k {
        return StopDecision::Stop(StopReason::Patience);
    }
    let low_volume = match crit.volume_rule {
        VolumeRule::Total => {
            let total: usize = generated.values().sum();
            (last.new_batch_total() as f64) < crit.v * total as f64
        }
        VolumeRule::PerLanguage => generated.iter().all(|(lang, &total)| {
            let batch = last.new_batch.get(lang).copied().unwrap_or(0);
            (batch as f64) < crit.v * total as f64
        }),
    };
    if low_volume {
        return StopDecision::Stop(StopReason::Volume);
    }
    if last.round >= crit.max_rounds {
        return StopDecision::Stop(StopReason::MaxRounds);
    }
    StopDecision::Continue
}

/// Round with the highest validation F1; ties go to the earliest round.
pub fn select_best(history: &[RoundState]) -> Option<u32> {
    let mut best: Option<&RoundState> = None;
    for r in history {
        if best.is_none_or(|b| r.validation.f1 > b.validation.f1) {
            best = Some(r);
        }
    }
    best.map(|r| r.round)
}
