#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use adaptive_ensemble::{PredictionLog, PredictionLogRecord, ProbabilityVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Student's-t upper quantile by quadrature of the density, independent of
/// the incomplete-beta route used by the library.
pub struct QuadratureT {
    memo: HashMap<(u64, u64), f64>,
}

impl QuadratureT {
    pub fn new() -> Self {
        Self { memo: HashMap::new() }
    }

    pub fn quantile(&mut self, df: u64, level: f64) -> f64 {
        *self
            .memo
            .entry((df, level.to_bits()))
            .or_insert_with(|| t_quantile_by_quadrature(df, level))
    }
}

/// Gamma((v+1)/2) / Gamma(v/2) by the exact recurrence r(v+2) = r(v)(v+1)/v.
fn gamma_ratio(df: u64) -> f64 {
    let pi = std::f64::consts::PI;
    let (mut r, mut v) = if df % 2 == 1 { (1.0 / pi.sqrt(), 1u64) } else { (pi.sqrt() / 2.0, 2u64) };
    while v < df {
        r *= (v as f64 + 1.0) / v as f64;
        v += 2;
    }
    r
}

fn t_pdf(t: f64, df: f64, norm: f64) -> f64 {
    norm * (1.0 + t * t / df).powf(-(df + 1.0) / 2.0)
}

/// P[0 <= T <= z] by composite Simpson.
fn t_central_mass(z: f64, df: f64, norm: f64) -> f64 {
    const N: usize = 20_000;
    let h = z / N as f64;
    let mut s = t_pdf(0.0, df, norm) + t_pdf(z, df, norm);
    for k in 1..N {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_pdf(k as f64 * h, df, norm);
    }
    s * h / 3.0
}

pub fn t_quantile_by_quadrature(df: u64, level: f64) -> f64 {
    let v = df as f64;
    let norm = gamma_ratio(df) / (v * std::f64::consts::PI).sqrt();
    let target = level / 2.0;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_central_mass(hi, v, norm) < target {
        lo = hi;
        hi *= 2.0;
    }
    // safeguarded Newton
    let mut z = 0.5 * (lo + hi);
    for _ in 0..100 {
        let f = t_central_mass(z, v, norm) - target;
        if f.abs() < 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let step = z - f / t_pdf(z, v, norm);
        z = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-12 {
            break;
        }
    }
    z
}

/// Noisy softmax predictions around a per-record base: the true class gets
/// a random logit boost and each local prediction adds Gaussian noise.
pub fn synthetic_sequence(rng: &mut ChaCha8Rng, classes: usize, steps: usize) -> (usize, Vec<ProbabilityVector>) {
    let label = rng.gen_range(0..classes);
    let boost = rng.gen_range(0.0..7.0);
    let sigma = rng.gen_range(0.05..2.5);
    let noise = Normal::new(0.0, sigma).unwrap();
    let base: Vec<f64> = (0..classes)
        .map(|c| if c == label { boost } else { rng.gen_range(-1.0..1.0) })
        .collect();
    let preds = (0..steps)
        .map(|_| {
            let z: Vec<f64> = base.iter().map(|b| b + noise.sample(rng)).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            ProbabilityVector::new(e.iter().map(|v| v / s).collect()).unwrap()
        })
        .collect();
    (label, preds)
}

pub fn synthetic_log(records: usize, classes: usize, steps: usize, seed: u64) -> PredictionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..records)
        .map(|i| {
            let (label, preds) = synthetic_sequence(&mut rng, classes, steps);
            PredictionLogRecord {
                id: format!("r{i:05}"),
                true_label: label,
                preds,
                tags: None,
            }
        })
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("dataset".to_string(), serde_json::Value::from("synthetic-noisy-softmax"));
    PredictionLog::new(classes, records, meta).unwrap()
}

/// Error rate of averaging the first `k` predictions, by plain summation.
pub fn prefix_mean_error(log: &PredictionLog, k: usize) -> f64 {
    let wrong = log
        .records
        .iter()
        .filter(|r| {
            let mut sums = vec![0.0; r.preds[0].num_classes()];
            for p in &r.preds[..k] {
                for (s, v) in sums.iter_mut().zip(p.as_slice()) {
                    *s += v;
                }
            }
            let best = sums
                .iter()
                .enumerate()
                .fold(0, |b, (c, &v)| if v > sums[b] { c } else { b });
            best != r.true_label
        })
        .count();
    wrong as f64 / log.len() as f64
}
