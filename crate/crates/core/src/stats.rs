//! Streaming moments and Student's-t quantiles for the confidence-interval
//! termination rule.

use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use crate::error::{Error, Result};

/// Two-sided confidence level `1 - alpha`, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ConfidenceLevel(f64);

impl ConfidenceLevel {
    pub fn new(level: f64) -> Result<Self> {
        if level > 0.0 && level < 1.0 {
            Ok(Self(level))
        } else {
            Err(Error::domain(format!(
                "confidence level must lie in (0, 1), got {level}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Significance level `alpha = 1 - level`.
    pub fn alpha(self) -> f64 {
        1.0 - self.0
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-pass count, mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds moments directly from their components.
    pub fn from_parts(count: u64, mean: f64, m2: f64) -> Result<Self> {
        if count == 0 && (mean != 0.0 || m2 != 0.0) {
            return Err(Error::domain("empty moments must have zero mean and m2"));
        }
        if !(m2 >= 0.0) || !mean.is_finite() {
            return Err(Error::domain(format!(
                "invalid moments (mean {mean}, m2 {m2})"
            )));
        }
        Ok(Self { count, mean, m2 })
    }

    pub fn push(&mut self, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value), "value {value} outside [0, 1]");
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        // rounding can leave a -0.0 or a tiny negative after cancellation
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
    }

    /// Value-style update: returns the moments after observing `value`.
    #[must_use]
    pub fn updated(mut self, value: f64) -> Self {
        self.push(value);
        self
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the running mean.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Sample variance with Bessel's correction; `None` below two samples.
    pub fn sample_variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// Upper quantile `z` with `P[T <= z] = 1 - alpha/2` for a Student's-t
/// variable with `degrees_of_freedom` degrees of freedom.
///
/// Values are computed once per `(df, level)` by bisection on the
/// regularized incomplete beta function and memoized process-wide.
pub fn t_quantile(degrees_of_freedom: u64, confidence: ConfidenceLevel) -> Result<f64> {
    if degrees_of_freedom == 0 {
        return Err(Error::domain("t quantile needs at least one degree of freedom"));
    }
    static MEMO: OnceLock<RwLock<HashMap<(u64, u64), f64>>> = OnceLock::new();
    let memo = MEMO.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (degrees_of_freedom, confidence.value().to_bits());
    if let Some(&z) = memo.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(z);
    }
    let z = invert_t_tail(degrees_of_freedom as f64, confidence.alpha());
    // Racing writers compute the same deterministic value.
    memo.write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(key, z);
    Ok(z)
}

/// Half width `z * sqrt(m2 / (i - 1)) / sqrt(i)` of the confidence interval
/// around the running mean.
pub fn ci_half_width(moments: &RunningMoments, confidence: ConfidenceLevel) -> Result<f64> {
    let n = moments.count();
    if n < 2 {
        return Err(Error::domain(format!(
            "confidence interval needs at least two samples, got {n}"
        )));
    }
    if moments.m2() == 0.0 {
        return Ok(0.0);
    }
    let z = t_quantile(n - 1, confidence)?;
    let sd = (moments.m2() / (n - 1) as f64).sqrt();
    Ok(z * sd / (n as f64).sqrt())
}

/// Two-sided tail mass `P[|T| > t]`, equal to `I_{df/(df+t^2)}(df/2, 1/2)`.
pub(crate) fn t_two_sided_tail(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5)
}

fn invert_t_tail(df: f64, alpha: f64) -> f64 {
    // Tail mass is strictly decreasing in t on [0, inf).
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while t_two_sided_tail(hi, df) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        if t_two_sided_tail(mid, df) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (k, c)| acc + c / (x + k as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

pub(crate) fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
