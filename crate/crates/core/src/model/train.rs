use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::optim::{AdamW, AdamWConfig, LinearWarmup};
use super::{EdgeModel, ModelConfig};
use crate::corpus::Document;
use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{enumerate_candidates, Edge, FlowGraph};
use crate::tensor::{Scalar, Tape, Tensor};

/// A document with its sentence features.
#[derive(Clone, Debug)]
pub struct Sample {
    pub doc: Document,
    pub features: EmbeddingMatrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeights {
    /// Inverse class frequency over the training pairs, scaled so `w₀ = 1`.
    #[default]
    Balanced,
    /// Explicit `(w₀, w₁)`.
    Fixed([f64; 2]),
}

/// `(1, negatives / positives)`.
pub fn balanced_weights(negatives: usize, positives: usize) -> Result<[f64; 2]> {
    if positives == 0 {
        return Err(Error::validation("training split has no gold edges"));
    }
    if negatives == 0 {
        return Ok([1.0, 1.0]);
    }
    Ok([1.0, negatives as f64 / positives as f64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub optimizer: AdamWConfig,
    pub class_weights: ClassWeights,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-5,
            warmup_fraction: 0.1,
            optimizer: AdamWConfig::default(),
            class_weights: ClassWeights::Balanced,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 0.5]",
                self.warmup_fraction
            )));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || o.weight_decay < 0.0 {
            return Err(Error::Config("optimizer constants out of range".into()));
        }
        if let ClassWeights::Fixed(w) = self.class_weights {
            if !w.iter().all(|&v| v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("class weights {w:?} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_prauc: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation PRAUC.
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
    pub class_weights: [f64; 2],
}

struct Prepared<T> {
    features: Tensor<T>,
    graph: FlowGraph,
    pairs: Vec<Edge>,
    labels: Vec<usize>,
}

fn prepare<T: Scalar>(sample: &Sample, model: &EdgeModel<T>) -> Result<Prepared<T>> {
    model.check_features(sample.doc.id(), &sample.features)?;
    let candidates = enumerate_candidates(&sample.doc, model.config.window)?;
    Ok(Prepared {
        features: sample.features.to_tensor(),
        graph: model.config.graph_for(sample.doc.len())?,
        labels: candidates.labels.iter().map(|&l| usize::from(l)).collect(),
        pairs: candidates.pairs,
    })
}

fn feature_dim(samples: &[Sample]) -> Result<usize> {
    let d = samples[0].features.d();
    if let Some(s) = samples.iter().find(|s| s.features.d() != d) {
        return Err(Error::validation(format!(
            "document '{}' has feature dimension {}, expected {d}",
            s.doc.id(),
            s.features.d()
        )));
    }
    Ok(d)
}

/// Mini-batches of whole graphs; weighted cross-entropy over every candidate
/// pair in a batch; AdamW with linear warmup and decay. After each epoch the
/// validation PRAUC is measured and the best epoch kept, ties going to the
/// earlier one.
pub fn train<T: Scalar>(train: &[Sample], validation: &[Sample], config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let in_dim = feature_dim(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EdgeModel::<T>::with_rng(config.model.clone(), in_dim, &mut rng)?;

    let data = train.iter().map(|s| prepare(s, &model)).collect::<Result<Vec<_>>>()?;
    for s in validation {
        model.check_features(s.doc.id(), &s.features)?;
    }
    let positives: usize = data.iter().map(|p| p.labels.iter().sum::<usize>()).sum();
    let total: usize = data.iter().map(|p| p.labels.len()).sum();
    let weights = match config.class_weights {
        ClassWeights::Balanced => balanced_weights(total - positives, positives)?,
        ClassWeights::Fixed(w) => w,
    };
    let weights_t = [T::of(weights[0]), T::of(weights[1])];

    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let schedule = LinearWarmup::new(config.learning_rate, config.epochs * steps_per_epoch, config.warmup_fraction);
    let mut optimizer = AdamW::new(config.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let diverged = |e: Error, loss: f64| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, step, loss },
                other => other,
            };
            let mut tape = Tape::new();
            let params = model.params.bind(&mut tape);
            let mut logits = Vec::with_capacity(batch.len());
            let mut labels = Vec::new();
            for &k in batch {
                let p = &data[k];
                let out = model.forward(&mut tape, &params, &p.features, &p.graph, &p.pairs, true, &mut rng);
                logits.push(out.map_err(|e| diverged(e, f64::NAN))?);
                labels.extend_from_slice(&p.labels);
            }
            let logits = tape.concat_rows(&logits)?;
            let loss = tape
                .weighted_cross_entropy(logits, &labels, &weights_t)
                .map_err(|e| diverged(e, f64::NAN))?;
            let value = tape.value(loss).get(0, 0).as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            loss_sum += value;
            tape.backward(loss).map_err(|e| diverged(e, value))?;
            let grads = model.params.grads(&tape, &params);
            optimizer.step(model.params.values_mut(), &grads, schedule.lr(step))?;
            if !model.params.values().iter().all(Tensor::is_finite) {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            step += 1;
        }
        let validation_prauc = match model.evaluate(validation, false) {
            Ok(report) => report.prauc,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged { epoch, step, loss: f64::NAN });
            }
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            validation_prauc,
            learning_rate: schedule.lr(step.saturating_sub(1)),
        });
        if best.as_ref().is_none_or(|(score, _, _)| validation_prauc > *score) {
            best = Some((validation_prauc, epoch, model.params.values().to_vec()));
        }
    }

    let (best_prauc, best_epoch, values) = best.expect("at least one epoch");
    for (slot, v) in model.params.values_mut().iter_mut().zip(values) {
        *slot = v;
    }
    let meta = CheckpointMeta {
        precision: T::PRECISION,
        in_dim,
        model: config.model.clone(),
        train: Some(config.clone()),
        best_validation_prauc: Some(best_prauc),
        epoch: Some(best_epoch),
        features: None,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { meta, model },
        history,
        class_weights: weights,
    })
}
