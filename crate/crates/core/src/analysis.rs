//! Offline analyses over prediction logs.
//!
//! * Percentile buckets: samples ranked by the max probability of their
//!   first local prediction, with error before and after averaging and the
//!   correct/incorrect x same/different breakdown of the first two
//!   predictions.
//! * Sweeps: (mean predictions used, error rate) for fixed-size ensembles and
//!   adaptive policies, relative to the single-prediction baseline.

use std::path::Path;

use serde::Serialize;

use crate::ensembler::{ensemble_batch, EnsembleConfig};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::prediction_source::{PredictionLog, PredictionLogRecord};
use crate::probability::argmax;
use crate::termination::TerminationPolicy;

pub const DEFAULT_BUCKETS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: usize,
    pub count: usize,
    /// Mean of the first prediction's max probability.
    pub mean_prob: f64,
    pub err_before: f64,
    pub err_after: f64,
    /// First prediction correct, second agrees.
    #[serde(rename = "cs")]
    pub correct_same: usize,
    #[serde(rename = "cd")]
    pub correct_different: usize,
    #[serde(rename = "is")]
    pub incorrect_same: usize,
    #[serde(rename = "id")]
    pub incorrect_different: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub ensemble_size: usize,
    /// Highest first-prediction probability first.
    pub buckets: Vec<BucketRow>,
}

impl BucketReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

fn mean_prefix_label(rec: &PredictionLogRecord, k: usize) -> usize {
    let mut sums = vec![0.0; rec.preds[0].num_classes()];
    for p in &rec.preds[..k] {
        for (s, v) in sums.iter_mut().zip(p.as_slice()) {
            *s += v;
        }
    }
    argmax(&sums)
}

/// Record indices ordered by first-prediction max probability, highest
/// first; equal probabilities fall back to id order.
pub fn rank_by_first_probability(log: &PredictionLog) -> Vec<usize> {
    let mut order: Vec<usize> = (0..log.len()).collect();
    let first = |i: usize| log.records[i].preds[0].max_prob();
    order.sort_by(|&a, &b| {
        first(b)
            .total_cmp(&first(a))
            .then_with(|| log.records[a].id.cmp(&log.records[b].id))
    });
    order
}

/// Sizes of `buckets` near-equal groups over `n` items, the remainder spread
/// over the earliest groups.
pub fn bucket_sizes(n: usize, buckets: usize) -> Vec<usize> {
    let base = n / buckets;
    let extra = n % buckets;
    (0..buckets).map(|b| base + usize::from(b < extra)).collect()
}

pub fn bucket_analysis(log: &PredictionLog, ensemble_size: usize, num_buckets: usize) -> Result<BucketReport> {
    log.num_classes()?;
    if num_buckets == 0 || ensemble_size == 0 {
        return Err(Error::domain("bucket count and ensemble size must be at least 1"));
    }
    let need = ensemble_size.max(2);
    if let Some(r) = log.records.iter().find(|r| r.preds.len() < need) {
        return Err(Error::data(format!(
            "record {:?} has {} predictions, bucket analysis needs {need}",
            r.id,
            r.preds.len()
        )));
    }

    let order = rank_by_first_probability(log);
    let mut rows = Vec::with_capacity(num_buckets);
    let mut start = 0;
    for (b, size) in bucket_sizes(order.len(), num_buckets).into_iter().enumerate() {
        let mut row = BucketRow {
            bucket: b,
            count: size,
            ..BucketRow::default()
        };
        let (mut prob_sum, mut wrong_before, mut wrong_after) = (0.0, 0usize, 0usize);
        for &i in &order[start..start + size] {
            let rec = &log.records[i];
            let first = rec.preds[0].argmax();
            let second = rec.preds[1].argmax();
            let correct = first == rec.true_label;
            prob_sum += rec.preds[0].max_prob();
            wrong_before += usize::from(!correct);
            wrong_after += usize::from(mean_prefix_label(rec, ensemble_size) != rec.true_label);
            match (correct, first == second) {
                (true, true) => row.correct_same += 1,
                (true, false) => row.correct_different += 1,
                (false, true) => row.incorrect_same += 1,
                (false, false) => row.incorrect_different += 1,
            }
        }
        if size > 0 {
            row.mean_prob = prob_sum / size as f64;
            row.err_before = wrong_before as f64 / size as f64;
            row.err_after = wrong_after as f64 / size as f64;
        }
        rows.push(row);
        start += size;
    }
    Ok(BucketReport {
        ensemble_size,
        buckets: rows,
    })
}

/// Error of the first prediction versus a `k`-prediction average on the
/// records accepted by `select`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleGain {
    pub samples: usize,
    pub err_before: f64,
    pub err_after: f64,
}

impl EnsembleGain {
    /// Fraction of the single-prediction error removed by averaging; 0 when
    /// there was no error to remove.
    pub fn relative_reduction(&self) -> f64 {
        if self.err_before == 0.0 {
            0.0
        } else {
            (self.err_before - self.err_after) / self.err_before
        }
    }
}

pub fn ensemble_gain<F>(log: &PredictionLog, k: usize, mut select: F) -> Result<EnsembleGain>
where
    F: FnMut(&PredictionLogRecord) -> bool,
{
    if k == 0 {
        return Err(Error::domain("ensemble size must be at least 1"));
    }
    let (mut n, mut before, mut after) = (0usize, 0usize, 0usize);
    for rec in log.records.iter().filter(|r| select(r)) {
        if rec.preds.len() < k {
            return Err(Error::data(format!(
                "record {:?} has {} predictions, need {k}",
                rec.id,
                rec.preds.len()
            )));
        }
        n += 1;
        before += usize::from(rec.preds[0].argmax() != rec.true_label);
        after += usize::from(mean_prefix_label(rec, k) != rec.true_label);
    }
    let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(EnsembleGain {
        samples: n,
        err_before: rate(before),
        err_after: rate(after),
    })
}

/// One leg of a cost/accuracy sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPolicy {
    /// Average exactly `k` predictions for every sample.
    Fixed(usize),
    /// Adaptive termination under the sweep's budget.
    Adaptive(TerminationPolicy),
}

impl SweepPolicy {
    /// Fixed sizes `1..=n`, static thresholds and confidence levels 90/95/99%.
    pub fn standard_grid(n: usize) -> Vec<SweepPolicy> {
        let mut out: Vec<SweepPolicy> = (1..=n).map(SweepPolicy::Fixed).collect();
        for t in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999] {
            out.push(SweepPolicy::Adaptive(TerminationPolicy::StaticThreshold(t)));
        }
        for c in [0.9, 0.95, 0.99] {
            out.push(SweepPolicy::Adaptive(
                TerminationPolicy::confidence_level(c).expect("valid level"),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub policy: String,
    #[serde(rename = "mean_preds")]
    pub mean_predictions_used: f64,
    #[serde(rename = "err_rate")]
    pub error_rate: f64,
    /// Error reduction over the single-prediction baseline, in percentage points.
    #[serde(rename = "improvement_pp")]
    pub improvement_pp: f64,
}

pub fn sweep(log: &PredictionLog, policies: &[SweepPolicy], max_predictions: usize) -> Result<Vec<SweepPoint>> {
    log.num_classes()?;
    if max_predictions == 0 {
        return Err(Error::domain("max_predictions must be at least 1"));
    }
    if let Some(r) = log.records.iter().find(|r| r.preds.len() < max_predictions) {
        return Err(Error::data(format!(
            "record {:?} has {} predictions, sweep budget is {max_predictions}",
            r.id,
            r.preds.len()
        )));
    }
    let run = |policy: TerminationPolicy, budget: usize| -> Result<(f64, f64)> {
        let cfg = EnsembleConfig::new(budget, policy)?;
        let out = ensemble_batch(&log.records, &cfg)?;
        Ok((out.summary.mean_predictions_used, out.summary.error_rate))
    };
    let (_, baseline) = run(TerminationPolicy::Never, 1)?;

    policies
        .iter()
        .map(|p| {
            let (name, (mean, err)) = match *p {
                SweepPolicy::Fixed(k) => {
                    if k == 0 || k > max_predictions {
                        return Err(Error::domain(format!(
                            "fixed ensemble size {k} outside 1..={max_predictions}"
                        )));
                    }
                    (format!("never@{k}"), run(TerminationPolicy::Never, k)?)
                }
                SweepPolicy::Adaptive(policy) => (
                    format!("{policy}@{max_predictions}"),
                    run(policy, max_predictions)?,
                ),
            };
            Ok(SweepPoint {
                policy: name,
                mean_predictions_used: mean,
                error_rate: err,
                improvement_pp: 100.0 * (baseline - err),
            })
        })
        .collect()
}

pub fn write_buckets_csv(report: &BucketReport, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&report.buckets, path.as_ref())
}

pub fn write_sweep_csv(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    write_rows(points, path.as_ref())
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for row in rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    })
}
