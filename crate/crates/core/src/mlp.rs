//! A from-scratch three-layer perceptron on a synthetic 2-D binary task.
//!
//! Class A (label 0) covers a small square at the origin and a triangle in
//! the upper-right corner; everything else is class B (label 1). A network
//! with too few hidden units misses the small square entirely and
//! misclassifies it with near-certain probability, which is the kind of
//! error that averaging more predictions cannot repair.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::prediction_source::{write_log, PredictionLog, PredictionLogRecord};
use crate::probability::ProbabilityVector;

pub const CLASS_A: usize = 0;
pub const CLASS_B: usize = 1;

pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 10_000;
pub const DEFAULT_SAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample2D {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

impl Sample2D {
    pub fn labeled(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            label: label_of(x, y),
        }
    }
}

pub fn label_of(x: f64, y: f64) -> usize {
    let corner = x <= 0.2 && y <= 0.2;
    let triangle = x + y >= 1.2 && x >= 0.4 && y >= 0.4;
    if corner || triangle {
        CLASS_A
    } else {
        CLASS_B
    }
}

/// True for points of the small class-A square at the origin.
pub fn in_corner_square(x: f64, y: f64) -> bool {
    x <= 0.2 && y <= 0.2
}

/// `n` points uniform on the unit square, labeled by [`label_of`].
pub fn generate_dataset(n: usize, seed: u64) -> Result<Vec<Sample2D>> {
    if n == 0 {
        return Err(Error::domain("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            Sample2D::labeled(x, y)
        })
        .collect())
}

/// Regular grid over the corner square `[0, 0.2]^2` with spacing 0.01.
pub fn corner_grid() -> Vec<Sample2D> {
    let mut out = Vec::with_capacity(21 * 21);
    for i in 0..=20 {
        for j in 0..=20 {
            out.push(Sample2D::labeled(i as f64 / 100.0, j as f64 / 100.0));
        }
    }
    out
}

pub fn write_dataset_csv(samples: &[Sample2D], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for s in samples {
            wtr.serialize(s)?;
        }
        wtr.flush()?;
        Ok(())
    })
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<Sample2D>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<Sample2D>().enumerate() {
        let s = rec?;
        if s.label > 1 || !s.x.is_finite() || !s.y.is_finite() {
            return Err(Error::data(format!("dataset row {}: invalid sample {s:?}", row + 1)));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::data("dataset is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub epochs: usize,
    pub learning_rate: f64,
    pub samples: usize,
    pub final_loss: f64,
}

/// Two inputs, one sigmoid hidden layer, two softmax outputs.
///
/// Weight matrices are row-major: `w_hidden[j * 2 + i]` connects input `i`
/// to hidden unit `j`, and `w_out[k * hidden + j]` connects hidden unit `j`
/// to output `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden_size: usize,
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingInfo>,
}

impl MlpModel {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            hidden_size,
            w_hidden: vec![0.0; 2 * hidden_size],
            b_hidden: vec![0.0; hidden_size],
            w_out: vec![0.0; 2 * hidden_size],
            b_out: vec![0.0; 2],
            seed: 0,
            training: None,
        }
    }

    /// Weights and biases uniform in [-0.5, 0.5].
    pub fn random(hidden_size: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(hidden_size);
        for w in m.params_mut() {
            *w = rng.gen_range(-0.5..=0.5);
        }
        m
    }

    pub fn num_params(&self) -> usize {
        5 * self.hidden_size + 2
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_hidden
            .iter_mut()
            .chain(self.b_hidden.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
    }

    /// All parameters in the order `w_hidden, b_hidden, w_out, b_out`.
    pub fn params(&self) -> Vec<f64> {
        self.w_hidden
            .iter()
            .chain(&self.b_hidden)
            .chain(&self.w_out)
            .chain(&self.b_out)
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        for (w, &p) in self.params_mut().zip(params) {
            *w = p;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size;
        if h == 0
            || self.w_hidden.len() != 2 * h
            || self.b_hidden.len() != h
            || self.w_out.len() != 2 * h
            || self.b_out.len() != 2
        {
            return Err(Error::data(format!("inconsistent shapes for hidden size {h}")));
        }
        if self.params().iter().any(|w| !w.is_finite()) {
            return Err(Error::data("model has non-finite weights"));
        }
        Ok(())
    }

    fn hidden_activations(&self, x: f64, y: f64, out: &mut [f64]) {
        for (j, h) in out.iter_mut().enumerate() {
            let a = self.w_hidden[2 * j] * x + self.w_hidden[2 * j + 1] * y + self.b_hidden[j];
            *h = sigmoid(a);
        }
    }

    fn output_probs(&self, hidden: &[f64]) -> [f64; 2] {
        let h = self.hidden_size;
        let mut z = [self.b_out[0], self.b_out[1]];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk += self.w_out[k * h..(k + 1) * h]
                .iter()
                .zip(hidden)
                .map(|(w, a)| w * a)
                .sum::<f64>();
        }
        softmax2(z)
    }

    pub fn probabilities(&self, x: f64, y: f64) -> [f64; 2] {
        let mut hidden = vec![0.0; self.hidden_size];
        self.hidden_activations(x, y, &mut hidden);
        self.output_probs(&hidden)
    }

    pub fn predict(&self, x: f64, y: f64) -> ProbabilityVector {
        let p = self.probabilities(x, y);
        ProbabilityVector::new(p.to_vec()).expect("softmax output is a distribution")
    }

    /// Cross-entropy loss on one sample and its gradient, laid out like
    /// [`MlpModel::params`].
    pub fn loss_and_gradient(&self, sample: &Sample2D) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let mut scratch = Scratch::new(self.hidden_size);
        let loss = self.backprop(sample, &mut scratch);
        let h = self.hidden_size;
        for j in 0..h {
            grad[2 * j] = scratch.d_hidden[j] * sample.x;
            grad[2 * j + 1] = scratch.d_hidden[j] * sample.y;
            grad[2 * h + j] = scratch.d_hidden[j];
        }
        for k in 0..2 {
            for j in 0..h {
                grad[3 * h + k * h + j] = scratch.d_out[k] * scratch.hidden[j];
            }
            grad[5 * h + k] = scratch.d_out[k];
        }
        (loss, grad)
    }

    pub fn loss(&self, sample: &Sample2D) -> f64 {
        let p = self.probabilities(sample.x, sample.y);
        nll(p[sample.label])
    }

    /// Forward and backward pass; leaves output and pre-activation deltas in
    /// `scratch` and returns the loss.
    fn backprop(&self, sample: &Sample2D, scratch: &mut Scratch) -> f64 {
        let h = self.hidden_size;
        self.hidden_activations(sample.x, sample.y, &mut scratch.hidden);
        let p = self.output_probs(&scratch.hidden);
        for k in 0..2 {
            scratch.d_out[k] = p[k] - if k == sample.label { 1.0 } else { 0.0 };
        }
        for j in 0..h {
            let back = scratch.d_out[0] * self.w_out[j] + scratch.d_out[1] * self.w_out[h + j];
            let a = scratch.hidden[j];
            scratch.d_hidden[j] = back * a * (1.0 - a);
        }
        nll(p[sample.label])
    }

    fn sgd_step(&mut self, sample: &Sample2D, lr: f64, scratch: &mut Scratch) -> f64 {
        let loss = self.backprop(sample, scratch);
        let h = self.hidden_size;
        for k in 0..2 {
            let d = lr * scratch.d_out[k];
            for (w, a) in self.w_out[k * h..(k + 1) * h].iter_mut().zip(&scratch.hidden) {
                *w -= d * a;
            }
            self.b_out[k] -= d;
        }
        for j in 0..h {
            let d = lr * scratch.d_hidden[j];
            self.w_hidden[2 * j] -= d * sample.x;
            self.w_hidden[2 * j + 1] -= d * sample.y;
            self.b_hidden[j] -= d;
        }
        loss
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        model.validate()?;
        Ok(model)
    }
}

struct Scratch {
    hidden: Vec<f64>,
    d_hidden: Vec<f64>,
    d_out: [f64; 2],
}

impl Scratch {
    fn new(h: usize) -> Self {
        Self {
            hidden: vec![0.0; h],
            d_hidden: vec![0.0; h],
            d_out: [0.0; 2],
        }
    }
}

/// Negative log-likelihood, capped for p = 0 but propagating NaN.
fn nll(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(hidden_size: usize, seed: u64) -> Self {
        Self {
            hidden_size,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// Per-sample SGD on cross-entropy, reshuffling every epoch. The seed fixes
/// both the initial weights and the visiting order. Returns the model and
/// the mean loss of the final epoch.
pub fn train(dataset: &[Sample2D], config: &TrainConfig) -> Result<(MlpModel, f64)> {
    if dataset.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    if config.epochs == 0 || config.hidden_size == 0 {
        return Err(Error::domain("epochs and hidden size must be at least 1"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::domain(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::random(config.hidden_size, &mut rng);
    model.seed = config.seed;
    let mut scratch = Scratch::new(config.hidden_size);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = f64::NAN;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            total += model.sgd_step(&dataset[i], config.learning_rate, &mut scratch);
        }
        epoch_loss = total / dataset.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
    }
    model.training = Some(TrainingInfo {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        samples: dataset.len(),
        final_loss: epoch_loss,
    });
    Ok((model, epoch_loss))
}

/// One record per sample; record `i` carries one prediction per model, in
/// model order, tagged `net<k>`.
pub fn build_prediction_log(models: &[MlpModel], dataset: &[Sample2D]) -> Result<PredictionLog> {
    if models.is_empty() {
        return Err(Error::domain("at least one model is required"));
    }
    let tags: Vec<String> = (1..=models.len()).map(|k| format!("net{k}")).collect();
    let records = dataset
        .iter()
        .enumerate()
        .map(|(i, s)| PredictionLogRecord {
            id: format!("s{i:06}"),
            true_label: s.label,
            preds: models.iter().map(|m| m.predict(s.x, s.y)).collect(),
            tags: Some(tags.clone()),
        })
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("dataset".into(), Value::from("synthetic-2d"));
    meta.insert("predictors".into(), Value::from(models.len()));
    meta.insert(
        "hidden_sizes".into(),
        Value::from(models.iter().map(|m| m.hidden_size).collect::<Vec<_>>()),
    );
    meta.insert(
        "seeds".into(),
        Value::from(models.iter().map(|m| m.seed).collect::<Vec<_>>()),
    );
    PredictionLog::new(2, records, meta)
}

pub fn emit_prediction_log(
    models: &[MlpModel],
    dataset: &[Sample2D],
    path: impl AsRef<Path>,
) -> Result<()> {
    let log = build_prediction_log(models, dataset)?;
    write_log(&log, path)
}
