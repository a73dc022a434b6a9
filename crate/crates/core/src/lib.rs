//! Adaptive ensemble prediction.
//!
//! Local predictions for an input are averaged one at a time, and the loop
//! stops as soon as the predicted label is significant at a chosen
//! confidence level, instead of always paying for the full ensemble.

pub mod analysis;
pub mod cli;
pub mod ensembler;
pub mod error;
pub mod io;
pub mod mlp;
pub mod prediction_source;
pub mod probability;
pub mod stats;
pub mod termination;

pub use ensembler::{ensemble_batch, ensemble_one, EnsembleConfig, EnsembleResult, EnsembleState};
pub use error::{Error, Result};
pub use prediction_source::{read_log, write_log, PredictionLog, PredictionLogRecord};
pub use probability::ProbabilityVector;
pub use stats::{ci_half_width, t_quantile, ConfidenceLevel, RunningMoments};
pub use termination::{should_terminate, TerminationDecision, TerminationPolicy, TerminationReason};
