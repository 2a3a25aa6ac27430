//! Training-pass construction under a global update-step budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::Mode;
use crate::backend::Hyperparams;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("gold stage is empty")]
    EmptyGold,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("step budget {0} yields no training steps")]
    ZeroBudget(u64),
}

/// The stage name used for the mixed stage in `combined` mode.
pub const COMBINED_STAGE: &str = "combined";
pub const GOLD_STAGE: &str = "gold";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStage {
    /// A language code, `gold`, or `combined`.
    pub name: String,
    pub records: usize,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stages: Vec<PlannedStage>,
    pub hyperparams: Hyperparams,
    pub step_budget: u64,
    /// Uniform epoch count of every stage.
    pub epochs: u32,
    /// `Σ ceil(records / batch) · epochs`.
    pub planned_steps: u64,
}

impl TrainPlan {
    /// Relative deviation of the planned steps from the budget.
    pub fn budget_deviation(&self) -> f64 {
        (self.planned_steps as f64 - self.step_budget as f64) / self.step_budget as f64
    }

    pub fn within_budget(&self, tolerance: f64) -> bool {
        self.budget_deviation().abs() <= tolerance
    }
}

/// Update steps of one pass with `epochs` over stages of the given sizes.
pub fn steps_for(sizes: impl IntoIterator<Item = usize>, batch: u32, epochs: u32) -> u64 {
    let b = u64::from(batch.max(1));
    sizes.into_iter().map(|n| (n as u64).div_ceil(b)).sum::<u64>() * u64::from(epochs)
}

/// The default budget: a 3-epoch pass over gold plus the full synthetic sets.
pub fn default_step_budget(synthetic: &[usize], gold: usize, batch: u32) -> u64 {
    steps_for(synthetic.iter().copied().chain(std::iter::once(gold)), batch, 3)
}

/// Orders and sizes the stages of one training pass.
///
/// `synthetic` is `(language, records)` in the configured stage order: the
/// accumulated silver sets for `gemquad`, the full validated sets for
/// `combined` and `sequential`; it is ignored for `baseline`. Empty synthetic
/// stages are dropped. Every stage gets `E = max(1, round(S · batch / Σ n))`
/// epochs.
pub fn plan_training(
    mode: Mode,
    synthetic: &[(String, usize)],
    gold: usize,
    hyperparams: &Hyperparams,
    step_budget: u64,
) -> Result<TrainPlan, PlanError> {
    if gold == 0 {
        return Err(PlanError::EmptyGold);
    }
    if hyperparams.batch_size == 0 {
        return Err(PlanError::ZeroBatch);
    }
    if step_budget == 0 {
        return Err(PlanError::ZeroBudget(step_budget));
    }

    let mut stages: Vec<(String, usize)> = Vec::new();
    match mode {
        Mode::Baseline => stages.push((GOLD_STAGE.into(), gold)),
        Mode::Combined => {
            let total = synthetic.iter().map(|(_, n)| n).sum::<usize>() + gold;
            stages.push((COMBINED_STAGE.into(), total));
        }
        Mode::Sequential | Mode::Gemquad => {
            stages.extend(synthetic.iter().filter(|(_, n)| *n > 0).cloned());
            stages.push((GOLD_STAGE.into(), gold));
        }
    }

    let total: usize = stages.iter().map(|(_, n)| n).sum();
    let exact = step_budget as f64 * f64::from(hyperparams.batch_size) / total as f64;
    let rounded = exact.round();
    let epochs = if rounded < 1.0 {
        log::warn!("step budget {step_budget} is below one epoch over {total} records; using 1 epoch");
        1
    } else {
        rounded as u32
    };
    let planned_steps = steps_for(stages.iter().map(|(_, n)| *n), hyperparams.batch_size, epochs);
    let plan = TrainPlan {
        stages: stages
            .into_iter()
            .map(|(name, records)| PlannedStage { name, records, epochs })
            .collect(),
        hyperparams: hyperparams.clone(),
        step_budget,
        epochs,
        planned_steps,
    };
    if !plan.within_budget(0.10) {
        log::warn!(
            "planned {} steps deviate {:+.1}% from the budget {step_budget}",
            plan.planned_steps,
            plan.budget_deviation() * 100.0
        );
    }
    Ok(plan)
}
