//! Per-sample termination conditions evaluated after each local prediction.
//!
//! The confidence-level rule stops once the predicted label's mean beats the
//! total of all other labels by more than the width of its Student's-t
//! interval: `2<p> - 1 > 2 * z * s / sqrt(i)`. With a single prediction no
//! interval exists, so a conservative static threshold decides instead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probability::{argmax, SUM_TOLERANCE};
use crate::stats::{ci_half_width, ConfidenceLevel, RunningMoments};

pub const DEFAULT_FIRST_STEP_THRESHOLD: f64 = 0.9999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminationPolicy {
    /// Always use the full budget (static ensemble).
    Never,
    /// Stop once the highest mean probability reaches the threshold.
    StaticThreshold(f64),
    /// One-vs-rest confidence interval test.
    ConfidenceLevel {
        confidence: ConfidenceLevel,
        first_step_threshold: f64,
    },
    /// Stop once the predicted label's interval clears every other label's.
    PairwiseCi {
        confidence: ConfidenceLevel,
        first_step_threshold: f64,
    },
}

impl TerminationPolicy {
    pub fn static_threshold(threshold: f64) -> Result<Self> {
        check_threshold("static threshold", threshold)?;
        Ok(Self::StaticThreshold(threshold))
    }

    pub fn confidence_level(level: f64) -> Result<Self> {
        Self::confidence_level_with_first_step(level, DEFAULT_FIRST_STEP_THRESHOLD)
    }

    pub fn confidence_level_with_first_step(level: f64, first_step_threshold: f64) -> Result<Self> {
        check_threshold("first-step threshold", first_step_threshold)?;
        Ok(Self::ConfidenceLevel {
            confidence: ConfidenceLevel::new(level)?,
            first_step_threshold,
        })
    }

    pub fn pairwise(level: f64) -> Result<Self> {
        Self::pairwise_with_first_step(level, DEFAULT_FIRST_STEP_THRESHOLD)
    }

    pub fn pairwise_with_first_step(level: f64, first_step_threshold: f64) -> Result<Self> {
        check_threshold("first-step threshold", first_step_threshold)?;
        Ok(Self::PairwiseCi {
            confidence: ConfidenceLevel::new(level)?,
            first_step_threshold,
        })
    }
}

fn check_threshold(what: &str, t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in (0, 1], got {t}")))
    }
}

impl fmt::Display for TerminationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, confidence, first) = match *self {
            Self::Never => return f.write_str("never"),
            Self::StaticThreshold(t) => return write!(f, "static:{t}"),
            Self::ConfidenceLevel {
                confidence,
                first_step_threshold,
            } => ("cl", confidence, first_step_threshold),
            Self::PairwiseCi {
                confidence,
                first_step_threshold,
            } => ("pairwise", confidence, first_step_threshold),
        };
        write!(f, "{name}:{confidence}")?;
        if first != DEFAULT_FIRST_STEP_THRESHOLD {
            write!(f, ":{first}")?;
        }
        Ok(())
    }
}

/// Parses `never | static:<T> | cl:<conf>[:<first>] | pairwise:<conf>[:<first>]`.
impl FromStr for TerminationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::domain(format!("invalid number {p:?} in policy {s:?}")))
        };
        match parts.as_slice() {
            ["never"] => Ok(Self::Never),
            ["static", t] => Self::static_threshold(num(t)?),
            ["cl", c] => Self::confidence_level(num(c)?),
            ["cl", c, first] => Self::confidence_level_with_first_step(num(c)?, num(first)?),
            ["pairwise", c] => Self::pairwise(num(c)?),
            ["pairwise", c, first] => Self::pairwise_with_first_step(num(c)?, num(first)?),
            _ => Err(Error::domain(format!(
                "unrecognized policy {s:?} (expected never, static:<T>, cl:<conf>[:<first>] or pairwise:<conf>[:<first>])"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    FirstStepThreshold,
    StaticThreshold,
    ConfidenceInterval,
    PairwiseCi,
    BudgetExhausted,
    NotTerminated,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FirstStepThreshold => "first-step-threshold",
            Self::StaticThreshold => "static-threshold",
            Self::ConfidenceInterval => "confidence-interval",
            Self::PairwiseCi => "pairwise-ci",
            Self::BudgetExhausted => "budget-exhausted",
            Self::NotTerminated => "not-terminated",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationDecision {
    pub terminate: bool,
    pub reason: TerminationReason,
    /// LHS minus RHS of the deciding inequality; 0 when nothing was tested.
    pub margin: f64,
    /// Confidence intervals computed to reach this decision.
    pub ci_evaluations: u32,
}

impl TerminationDecision {
    fn tested(fired: bool, reason: TerminationReason, margin: f64, ci_evaluations: u32) -> Self {
        Self {
            terminate: fired,
            reason: if fired { reason } else { TerminationReason::NotTerminated },
            margin,
            ci_evaluations,
        }
    }

    fn not_tested() -> Self {
        Self {
            terminate: false,
            reason: TerminationReason::NotTerminated,
            margin: 0.0,
            ci_evaluations: 0,
        }
    }
}

/// Decides whether to stop after `i` local predictions, where `i` is the
/// shared count of the per-class moments.
pub fn should_terminate(
    policy: &TerminationPolicy,
    per_class: &[RunningMoments],
) -> Result<TerminationDecision> {
    let first = per_class
        .first()
        .ok_or_else(|| Error::domain("no per-class moments"))?;
    let count = first.count();
    if count == 0 {
        return Err(Error::domain("termination checked before any prediction"));
    }
    if let Some(m) = per_class.iter().find(|m| m.count() != count) {
        return Err(Error::domain(format!(
            "per-class counts disagree ({} vs {count})",
            m.count()
        )));
    }
    let means: Vec<f64> = per_class.iter().map(RunningMoments::mean).collect();
    let total: f64 = means.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::domain(format!("per-class means sum to {total}")));
    }
    let best = argmax(&means);
    let top = means[best];

    let decision = match *policy {
        TerminationPolicy::Never => TerminationDecision::not_tested(),
        TerminationPolicy::StaticThreshold(t) => {
            TerminationDecision::tested(top >= t, TerminationReason::StaticThreshold, top - t, 0)
        }
        TerminationPolicy::ConfidenceLevel {
            first_step_threshold,
            ..
        }
        | TerminationPolicy::PairwiseCi {
            first_step_threshold,
            ..
        } if count == 1 => TerminationDecision::tested(
            top >= first_step_threshold,
            TerminationReason::FirstStepThreshold,
            top - first_step_threshold,
            0,
        ),
        TerminationPolicy::ConfidenceLevel { confidence, .. } => {
            if top < 0.5 {
                // 2<p> - 1 < 0 <= RHS: cannot fire, skip the interval
                TerminationDecision::not_tested()
            } else {
                let hw = ci_half_width(&per_class[best], confidence)?;
                let margin = (2.0 * top - 1.0) - 2.0 * hw;
                TerminationDecision::tested(margin > 0.0, TerminationReason::ConfidenceInterval, margin, 1)
            }
        }
        TerminationPolicy::PairwiseCi { confidence, .. } => {
            let widths = per_class
                .iter()
                .map(|m| ci_half_width(m, confidence))
                .collect::<Result<Vec<_>>>()?;
            let lower = top - widths[best];
            let margin = means
                .iter()
                .zip(&widths)
                .enumerate()
                .filter(|&(k, _)| k != best)
                .map(|(_, (m, w))| lower - (m + w))
                .fold(f64::INFINITY, f64::min);
            TerminationDecision::tested(
                margin > 0.0,
                TerminationReason::PairwiseCi,
                margin,
                widths.len() as u32,
            )
        }
    };
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments_of(seq: &[&[f64]]) -> Vec<RunningMoments> {
        let k = seq[0].len();
        let mut m = vec![RunningMoments::new(); k];
        for v in seq {
            for (mm, &p) in m.iter_mut().zip(v.iter()) {
                mm.push(p);
            }
        }
        m
    }

    fn cl95() -> TerminationPolicy {
        TerminationPolicy::confidence_level(0.95).unwrap()
    }

    #[test]
    fn worked_example_no_terminate() {
        let m = moments_of(&[&[0.9, 0.1], &[0.8, 0.2]]);
        let d = should_terminate(&cl95(), &m).unwrap();
        assert!(!d.terminate);
        assert_eq!(d.reason, TerminationReason::NotTerminated);
        // LHS 0.7, RHS 2 * 12.7062 * sqrt(0.005 / 2)
        assert!((d.margin - (0.7 - 1.270_62)).abs() < 1e-4, "{}", d.margin);
        assert_eq!(d.ci_evaluations, 1);
    }

    #[test]
    fn worked_example_terminate() {
        let m = moments_of(&[&[0.99, 0.01], &[0.98, 0.02]]);
        let d = should_terminate(&cl95(), &m).unwrap();
        assert!(d.terminate);
        assert_eq!(d.reason, TerminationReason::ConfidenceInterval);
        assert!((d.margin - (0.97 - 0.127_062)).abs() < 1e-4, "{}", d.margin);
    }

    #[test]
    fn zero_variance_agreement_terminates() {
        let m = moments_of(&[&[0.9, 0.1], &[0.9, 0.1]]);
        let d = should_terminate(&cl95(), &m).unwrap();
        assert!(d.terminate);
        assert!((d.margin - 0.8).abs() < 1e-12);
    }

    #[test]
    fn skip_rule_below_half() {
        let m = moments_of(&[&[0.45, 0.3, 0.25], &[0.45, 0.35, 0.2]]);
        for c in [0.5, 0.9, 0.99] {
            let p = TerminationPolicy::confidence_level(c).unwrap();
            let d = should_terminate(&p, &m).unwrap();
            assert!(!d.terminate);
            assert_eq!(d.ci_evaluations, 0);
            assert_eq!(d.margin, 0.0);
        }
    }

    #[test]
    fn first_step_rule() {
        let p = cl95();
        let d = should_terminate(&p, &moments_of(&[&[0.99995, 0.00005]])).unwrap();
        assert!(d.terminate);
        assert_eq!(d.reason, TerminationReason::FirstStepThreshold);
        let d = should_terminate(&p, &moments_of(&[&[0.999, 0.001]])).unwrap();
        assert!(!d.terminate);
        assert_eq!(d.ci_evaluations, 0);
        let pw = TerminationPolicy::pairwise(0.95).unwrap();
        let d = should_terminate(&pw, &moments_of(&[&[0.99995, 0.00005]])).unwrap();
        assert_eq!(d.reason, TerminationReason::FirstStepThreshold);
    }

    #[test]
    fn static_threshold_is_inclusive() {
        let m = moments_of(&[&[0.8, 0.2]]);
        let d = should_terminate(&TerminationPolicy::StaticThreshold(0.8), &m).unwrap();
        assert!(d.terminate);
        assert_eq!(d.reason, TerminationReason::StaticThreshold);
        let tiny = TerminationPolicy::static_threshold(1e-9).unwrap();
        let m = moments_of(&[&[0.25, 0.25, 0.25, 0.25]]);
        assert!(should_terminate(&tiny, &m).unwrap().terminate);
        let exact = moments_of(&[&[1.0, 0.0]]);
        assert!(should_terminate(&TerminationPolicy::StaticThreshold(1.0), &exact)
            .unwrap()
            .terminate);
    }

    #[test]
    fn never_never_terminates() {
        let m = moments_of(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = should_terminate(&TerminationPolicy::Never, &m).unwrap();
        assert!(!d.terminate);
    }

    #[test]
    fn pairwise_clears_all_labels() {
        // Zero variance everywhere: intervals are points, 0.4 > 0.3.
        let m = moments_of(&[&[0.4, 0.3, 0.3], &[0.4, 0.3, 0.3]]);
        let pw = TerminationPolicy::pairwise(0.95).unwrap();
        let d = should_terminate(&pw, &m).unwrap();
        assert!(d.terminate);
        assert_eq!(d.reason, TerminationReason::PairwiseCi);
        assert_eq!(d.ci_evaluations, 3);
        assert!((d.margin - 0.1).abs() < 1e-12);
        // The one-vs-rest rule cannot fire below 0.5.
        assert!(!should_terminate(&cl95(), &m).unwrap().terminate);
    }

    #[test]
    fn pairwise_matches_cl_for_two_classes() {
        let m = moments_of(&[&[0.75, 0.25], &[0.9, 0.1], &[0.7, 0.3]]);
        let a = should_terminate(&cl95(), &m).unwrap();
        let b = should_terminate(&TerminationPolicy::pairwise(0.95).unwrap(), &m).unwrap();
        assert_eq!(a.terminate, b.terminate);
        assert!((a.margin - b.margin).abs() < 1e-12);
    }

    #[test]
    fn malformed_moments_are_rejected() {
        assert!(should_terminate(&cl95(), &[]).is_err());
        let mut m = moments_of(&[&[0.6, 0.4]]);
        m[1].push(0.4);
        assert!(should_terminate(&cl95(), &m).is_err());
        let zero = vec![RunningMoments::new(); 2];
        assert!(should_terminate(&cl95(), &zero).is_err());
    }

    #[test]
    fn policy_grammar_round_trips() {
        for s in ["never", "static:0.8", "cl:0.95", "cl:0.9:0.999", "pairwise:0.99"] {
            let p: TerminationPolicy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        for bad in ["", "static", "static:0", "static:1.5", "cl:1", "cl:x", "bogus:0.5", "cl:0.9:0"] {
            assert!(bad.parse::<TerminationPolicy>().is_err(), "{bad}");
        }
    }
}
