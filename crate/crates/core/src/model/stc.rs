//! Sentence-type classification: a linear softmax head over frozen
//! sentence features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use crate::corpus::SentenceType;
use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

pub const STC_CLASSES: usize = 5;

#[derive(Clone, Debug)]
pub struct StcHead {
    pub params: ParamStore<f64>,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl StcHead {
    /// The bias starts at the log class prior of `labels`, so the untrained
    /// head already predicts the majority class on uninformative input.
    pub fn new(d: usize, labels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut counts = [0usize; STC_CLASSES];
        for &c in labels {
            counts[c] += 1;
        }
        let prior: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 / labels.len().max(1) as f64).max(1e-6).ln())
            .collect();
        let mut params = ParamStore::new();
        let weight = params.add_glorot("stc.weight", d, STC_CLASSES, rng);
        let bias = params.add("stc.bias", Tensor::from_rows(&[prior]));
        StcHead { params, weight, bias }
    }

    fn logits(&self, tape: &mut Tape<f64>, p: &Bound, x: Tensor<f64>) -> Result<Var> {
        let x = tape.constant(x);
        let z = tape.matmul(x, p.var(self.weight))?;
        tape.add_row(z, p.var(self.bias))
    }

    /// Arg-max class per row; ties go to the lower class index.
    pub fn predict(&self, x: &Tensor<f64>) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let z = self.logits(&mut tape, &p, x.clone())?;
        let z = tape.value(z);
        Ok((0..z.rows())
            .map(|r| {
                let row = z.row(r);
                (0..STC_CLASSES).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: AdamWConfig,
    /// Share of sentences held out for testing in each seed's split.
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for StcConfig {
    fn default() -> Self {
        StcConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            optimizer: AdamWConfig::default(),
            test_fraction: 0.2,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StcRun {
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StcReport {
    pub runs: Vec<StcRun>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Per class, in `A, I, A/I, C, NONE` order.
    pub class_counts: [usize; STC_CLASSES],
    pub majority_frequency: f64,
    /// Fewer than two classes present.
    pub degenerate: bool,
}

fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

fn rows(x: &EmbeddingMatrix, idx: &[usize]) -> Tensor<f64> {
    let d = x.d();
    let mut out = Tensor::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &v) in x.row(i).iter().enumerate() {
            out.set(r, c, v as f64);
        }
    }
    out
}

/// Trains one head per seed with unweighted cross-entropy on a shuffled
/// train/test split and reports micro accuracy.
pub fn stc_train_eval(features: &EmbeddingMatrix, labels: &[usize], config: &StcConfig) -> Result<StcReport> {
    if labels.len() != features.n() {
        return Err(Error::validation(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::validation("sentence-type classification needs at least 2 sentences"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= STC_CLASSES) {
        return Err(Error::validation(format!("sentence-type label {bad} outside 0..{STC_CLASSES}")));
    }
    if config.seeds.is_empty() || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("need at least one seed, epoch and batch item".into()));
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {} outside (0, 1)", config.test_fraction)));
    }

    let mut class_counts = [0usize; STC_CLASSES];
    for &c in labels {
        class_counts[c] += 1;
    }
    let n = labels.len();
    let test_len = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 1);
    let weights = [1.0; STC_CLASSES];

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (test_idx, train_idx) = idx.split_at(test_len);
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let mut head = StcHead::new(features.d(), &train_labels, &mut rng);
        let mut opt = AdamW::new(config.optimizer);
        let mut order = train_idx.to_vec();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let p = head.params.bind(&mut tape);
                let z = head.logits(&mut tape, &p, rows(features, batch))?;
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let loss = tape.weighted_cross_entropy(z, &y, &weights)?;
                tape.backward(loss)?;
                let grads = head.params.grads(&tape, &p);
                opt.step(head.params.values_mut(), &grads, config.learning_rate)?;
            }
        }
        let split_accuracy = |idx: &[usize]| -> Result<f64> {
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            Ok(accuracy(&head.predict(&rows(features, idx))?, &y))
        };
        runs.push(StcRun {
            seed,
            train_accuracy: split_accuracy(train_idx)?,
            test_accuracy: split_accuracy(test_idx)?,
        });
    }

    let k = runs.len() as f64;
    let mean = runs.iter().map(|r| r.test_accuracy).sum::<f64>() / k;
    let var = runs.iter().map(|r| (r.test_accuracy - mean).powi(2)).sum::<f64>() / k;
    Ok(StcReport {
        runs,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        class_counts,
        majority_frequency: *class_counts.iter().max().expect("5 classes") as f64 / n as f64,
        degenerate: class_counts.iter().filter(|&&c| c > 0).count() < 2,
    })
}

/// Labels of `stypes` as class indices.
pub fn stc_labels(stypes: &[SentenceType]) -> Vec<usize> {
    stypes.iter().map(|t| t.class_index()).collect()
}
