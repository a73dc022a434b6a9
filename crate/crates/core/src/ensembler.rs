//! The adaptive ensembling loop: pull local predictions one at a time, keep
//! per-class running averages, and stop as soon as the termination policy
//! fires or the budget of `N` predictions is spent.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prediction_source::PredictionLogRecord;
pub use crate::probability::ProbabilityVector;
use crate::stats::RunningMoments;
use crate::termination::{should_terminate, TerminationDecision, TerminationPolicy, TerminationReason};

pub const DEFAULT_MAX_PREDICTIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub max_predictions: usize,
    pub policy: TerminationPolicy,
    /// Keep every per-step decision in the result.
    pub trace: bool,
}

impl EnsembleConfig {
    pub fn new(max_predictions: usize, policy: TerminationPolicy) -> Result<Self> {
        if max_predictions == 0 {
            return Err(Error::domain("max_predictions must be at least 1"));
        }
        Ok(Self {
            max_predictions,
            policy,
            trace: false,
        })
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            max_predictions: DEFAULT_MAX_PREDICTIONS,
            policy: TerminationPolicy::confidence_level(0.95).expect("0.95 is a valid level"),
            trace: false,
        }
    }
}

/// Streaming per-class statistics for one in-flight sample.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    moments: Vec<RunningMoments>,
}

impl EnsembleState {
    pub fn new(num_classes: usize) -> Self {
        Self {
            moments: vec![RunningMoments::new(); num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.moments.len()
    }

    pub fn count(&self) -> u64 {
        self.moments.first().map_or(0, RunningMoments::count)
    }

    pub fn push(&mut self, pred: &ProbabilityVector) -> Result<()> {
        if pred.num_classes() != self.num_classes() {
            return Err(Error::data(format!(
                "prediction {} has {} classes, expected {}",
                self.count() + 1,
                pred.num_classes(),
                self.num_classes()
            )));
        }
        for (m, &p) in self.moments.iter_mut().zip(pred.as_slice()) {
            m.push(p);
        }
        Ok(())
    }

    pub fn moments(&self) -> &[RunningMoments] {
        &self.moments
    }

    pub fn means(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.mean().clamp(0.0, 1.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub predicted_label: usize,
    pub predictions_used: usize,
    pub final_probs: ProbabilityVector,
    pub reason: TerminationReason,
    pub ci_evaluations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TerminationDecision>>,
}

/// Ensembles one input. Vectors are requested from `predictions` lazily;
/// nothing past the terminating prediction is pulled.
pub fn ensemble_one<I>(predictions: I, config: &EnsembleConfig) -> Result<EnsembleResult>
where
    I: IntoIterator,
    I::Item: Borrow<ProbabilityVector>,
{
    let n = config.max_predictions;
    if n == 0 {
        return Err(Error::domain("max_predictions must be at least 1"));
    }
    let mut source = predictions.into_iter();
    let mut state: Option<EnsembleState> = None;
    let mut trace = config.trace.then(Vec::new);
    let mut ci_evaluations = 0u64;
    let mut reason = TerminationReason::BudgetExhausted;

    for i in 1..=n {
        let item = source.next().ok_or_else(|| {
            Error::data(format!(
                "prediction source exhausted after {} of {n} predictions",
                i - 1
            ))
        })?;
        let pred = item.borrow();
        let st = state.get_or_insert_with(|| EnsembleState::new(pred.num_classes()));
        st.push(pred)?;
        if i == n {
            break;
        }
        let decision = should_terminate(&config.policy, st.moments())?;
        ci_evaluations += u64::from(decision.ci_evaluations);
        if let Some(t) = trace.as_mut() {
            t.push(decision);
        }
        if decision.terminate {
            reason = decision.reason;
            break;
        }
    }

    let state = state.expect("at least one prediction consumed");
    let final_probs = ProbabilityVector::new(state.means())?;
    Ok(EnsembleResult {
        predicted_label: final_probs.argmax(),
        predictions_used: state.count() as usize,
        final_probs,
        reason,
        ci_evaluations,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordResult {
    pub id: String,
    pub label: usize,
    #[serde(flatten)]
    pub result: EnsembleResult,
}

impl RecordResult {
    pub fn correct(&self) -> bool {
        self.result.predicted_label == self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    pub policy: String,
    #[serde(rename = "N")]
    pub max_predictions: usize,
    pub samples: usize,
    pub total_predictions: u64,
    pub mean_predictions_used: f64,
    pub errors: usize,
    pub error_rate: f64,
    pub reasons: BTreeMap<TerminationReason, usize>,
    pub ci_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub results: Vec<RecordResult>,
    pub summary: CostSummary,
}

/// Runs [`ensemble_one`] over every record and aggregates the cost.
///
/// Every record must carry at least `N` predictions, even ones that would
/// terminate early, so that runs at different budgets stay comparable.
pub fn ensemble_batch(records: &[PredictionLogRecord], config: &EnsembleConfig) -> Result<BatchOutcome> {
    let n = config.max_predictions;
    let mut results = Vec::with_capacity(records.len());
    for rec in records {
        let attach = |e: Error| Error::Record {
            id: rec.id.clone(),
            source: Box::new(e),
        };
        if rec.preds.len() < n {
            return Err(attach(Error::data(format!(
                "{} predictions, budget needs {n}",
                rec.preds.len()
            ))));
        }
        let result = ensemble_one(&rec.preds, config).map_err(attach)?;
        results.push(RecordResult {
            id: rec.id.clone(),
            label: rec.true_label,
            result,
        });
    }
    let summary = summarize(&results, config);
    Ok(BatchOutcome { results, summary })
}

fn summarize(results: &[RecordResult], config: &EnsembleConfig) -> CostSummary {
    let samples = results.len();
    let total_predictions: u64 = results.iter().map(|r| r.result.predictions_used as u64).sum();
    let errors = results.iter().filter(|r| !r.correct()).count();
    let mut reasons = BTreeMap::new();
    for r in results {
        *reasons.entry(r.result.reason).or_insert(0) += 1;
    }
    let ratio = |num: f64| if samples == 0 { 0.0 } else { num / samples as f64 };
    CostSummary {
        policy: config.policy.to_string(),
        max_predictions: config.max_predictions,
        samples,
        total_predictions,
        mean_predictions_used: ratio(total_predictions as f64),
        errors,
        error_rate: ratio(errors as f64),
        reasons,
        ci_evaluations: results.iter().map(|r| r.result.ci_evaluations).sum(),
    }
}
