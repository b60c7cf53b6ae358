//! Class-weighted training of the phase models with Adam and early stopping
//! on a chronologically held-out slice of the development cohort.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelConfig};
use crate::numerics::{adam_step, AdamConfig, AdamState, L2Scope, NodeId, Tape, Tensor};
use crate::preprocess::{EncodedEncounter, PreprocessorState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub l2_scope: L2Scope,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Latest fraction of the development cohort held out for early stopping.
    pub es_fraction: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            l2: 0.01,
            l2_scope: L2Scope::default(),
            batch: 64,
            patience: 4,
            max_epochs: 100,
            es_fraction: 0.10,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.es_fraction > 0.0 && self.es_fraction < 1.0) {
            return Err(Error::Config(format!("es_fraction {} must lie in (0, 1)", self.es_fraction)));
        }
        if self.patience == 0 || self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch and max_epochs must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("lr must be positive and l2 non-negative".into()));
        }
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            l2: self.l2,
            l2_scope: self.l2_scope,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

/// `w_pos = N / (2·N_pos)`, `w_neg = N / (2·N_neg)`.
pub fn class_weights(labels: &[u8]) -> Option<ClassWeights> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    (pos > 0.0 && neg > 0.0).then(|| ClassWeights { w_pos: n / (2.0 * pos), w_neg: n / (2.0 * neg) })
}

/// Class weights of every branch of `model`, from the labels of `samples`.
pub fn task_class_weights(model: &Model, samples: &[EncodedEncounter]) -> Result<Vec<ClassWeights>> {
    label_indices(model)
        .into_iter()
        .zip(&model.task_names)
        .map(|(k, name)| {
            let labels: Vec<u8> = samples.iter().map(|e| e.labels[k]).collect();
            class_weights(&labels).ok_or_else(|| {
                Error::Data(format!(
                    "outcome `{name}` has a single class in the training portion; class weights are undefined"
                ))
            })
        })
        .collect()
}

/// Positions in the encounter label vector of each branch's outcome.
pub fn label_indices(model: &Model) -> Vec<usize> {
    match model.config.mode {
        Mode::Multitask => (0..model.task_names.len()).collect(),
        Mode::Single(k) => vec![k],
    }
}

/// Patience counter over a monitored loss: stops once `patience` evaluated
/// epochs in a row fail to improve on the best.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: None, bad_epochs: 0, seen: 0 }
    }

    /// Records one epoch; returns true when this epoch is the new best.
    pub fn record(&mut self, loss: f64) -> bool {
        let epoch = self.seen;
        self.seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    /// Mean weighted loss of each branch on the early-stop split.
    pub es_task_loss: Vec<f64>,
    /// Monitored quantity: mean of `es_task_loss`.
    pub es_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub task_names: Vec<String>,
    pub class_weights: Vec<ClassWeights>,
    pub train_size: usize,
    pub es_size: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// The history with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainHistory {
        let mut h = self.clone();
        h.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        h
    }
}

/// Weighted loss of each branch for one sample, recorded on `tape`.
fn sample_task_losses(
    model: &Model,
    tape: &mut Tape,
    enc: &EncodedEncounter,
    weights: &[ClassWeights],
    labels: &[usize],
) -> Result<Vec<NodeId>> {
    let bound = model.bind(tape);
    let inputs = model.inputs(tape, &bound, enc)?;
    let g = model.graph(tape, &bound, &inputs)?;
    g.logits
        .iter()
        .zip(weights.iter().zip(labels))
        .map(|(&z, (w, &k))| tape.sigmoid_bce(z, f64::from(enc.labels[k]), w.w_pos, w.w_neg))
        .collect()
}

/// Summed branch loss of one sample and its parameter gradients.
pub fn sample_loss_and_grads(
    model: &Model,
    enc: &EncodedEncounter,
    weights: &[ClassWeights],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let labels = label_indices(model);
    let mut tape = Tape::new();
    let losses = sample_task_losses(model, &mut tape, enc, weights, &labels)?;
    let total = tape.add_all(&losses)?;
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} on encounter `{}`",
            enc.encounter_id
        )));
    }
    Ok((loss, tape.backward(total)?.params()))
}

/// Per-branch weighted losses of one sample, without gradients.
pub fn sample_task_loss_values(model: &Model, enc: &EncodedEncounter, weights: &[ClassWeights]) -> Result<Vec<f64>> {
    let labels = label_indices(model);
    let mut tape = Tape::new();
    let losses = sample_task_losses(model, &mut tape, enc, weights, &labels)?;
    Ok(losses.iter().map(|&l| tape.value(l).item()).collect())
}

/// Mean loss over `batch` and the mean gradient. Samples are evaluated in
/// parallel but reduced in batch order, so the result does not depend on
/// the thread count.
pub fn batch_loss_and_grads(
    model: &Model,
    batch: &[&EncodedEncounter],
    weights: &[ClassWeights],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let chunk = rayon::current_num_threads().max(1);
    let mut total_loss = 0.0;
    let mut total: Option<BTreeMap<String, Tensor>> = None;
    for group in batch.chunks(chunk) {
        let results: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = group
            .par_iter()
            .map(|enc| sample_loss_and_grads(model, enc, weights))
            .collect();
        for r in results {
            let (loss, grads) = r?;
            total_loss += loss;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        acc.get_mut(&name).expect("same parameter set").add_assign(&g);
                    }
                }
            }
        }
    }
    let n = batch.len() as f64;
    let mut grads = total.ok_or_else(|| Error::Data("empty batch".into()))?;
    for g in grads.values_mut() {
        *g = g.scaled(1.0 / n);
    }
    Ok((total_loss / n, grads))
}

/// One Adam update on `batch`; returns the batch loss before the update.
pub fn train_step(
    model: &mut Model,
    batch: &[&EncodedEncounter],
    weights: &[ClassWeights],
    state: &mut AdamState,
    adam: &AdamConfig,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grads(model, batch, weights)?;
    adam_step(&mut model.params, &grads, state, adam)?;
    Ok(loss)
}

/// Mean weighted loss of each branch over `samples`.
pub fn task_losses(model: &Model, samples: &[EncodedEncounter], weights: &[ClassWeights]) -> Result<Vec<f64>> {
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|e| sample_task_loss_values(model, e, weights))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; weights.len()];
    for losses in &per_sample {
        for (s, l) in sums.iter_mut().zip(losses) {
            *s += l;
        }
    }
    let n = samples.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Splits the development cohort into a training part and the
/// chronologically latest `es_fraction` for early stopping. Both keep
/// cohort order.
pub fn early_stop_split(dev: &Cohort, es_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = dev.len();
    let n_es = ((n as f64) * es_fraction).ceil() as usize;
    if n < 2 || n_es == 0 || n_es >= n {
        return Err(Error::Data(format!(
            "development cohort of {n} encounters is too small for an early-stop split of {es_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| dev.encounters[i].admit_timestamp);
    let mut es: Vec<usize> = order[n - n_es..].to_vec();
    let mut train: Vec<usize> = order[..n - n_es].to_vec();
    es.sort_unstable();
    train.sort_unstable();
    Ok((train, es))
}

/// Trains `model` on pre-encoded samples with early stopping on `es`, and
/// returns the parameters of the best epoch.
pub fn fit(
    mut model: Model,
    train: &[EncodedEncounter],
    es: &[EncodedEncounter],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || es.is_empty() {
        return Err(Error::Data("training and early-stop portions must be non-empty".into()));
    }
    let weights = task_class_weights(&model, train)?;
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&EncodedEncounter> = idx.iter().map(|&i| &train[i]).collect();
            let loss = train_step(&mut model, &batch, &weights, &mut state, &adam).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let es_task_loss = task_losses(&model, es, &weights)?;
        let es_loss = es_task_loss.iter().sum::<f64>() / es_task_loss.len() as f64;
        if !es_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: early-stop loss is {es_loss}")));
        }
        if stopper.record(es_loss) {
            best = model.params.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            es_task_loss,
            es_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, early-stop loss {:.5}",
            record.train_loss,
            record.es_loss
        );
        epochs.push(record);
        if stopper.should_stop() {
            break;
        }
    }
    let stopped_early = stopper.should_stop();
    let history = TrainHistory {
        seed: cfg.seed,
        task_names: model.task_names.clone(),
        class_weights: weights,
        train_size: train.len(),
        es_size: es.len(),
        epochs,
        best_epoch: stopper.best_epoch().expect("at least one epoch"),
        stopped_early,
    };
    model.params = best;
    Ok((model, history))
}

/// Builds a model for `cfg.model`, encodes `dev`, splits off the early-stop
/// portion and trains.
pub fn train(dev: &Cohort, pre: &PreprocessorState, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let model = Model::build(&cfg.model, &dev.schema, cfg.seed)?;
    let encoded = pre.encode_cohort(dev)?;
    let (train_idx, es_idx) = early_stop_split(dev, cfg.es_fraction)?;
    let take = |idx: &[usize]| idx.iter().map(|&i| encoded[i].clone()).collect::<Vec<_>>();
    fit(model, &take(&train_idx), &take(&es_idx), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::weighted_bce;

    #[test]
    fn class_weight_examples() {
        let mut labels = vec![0u8; 40560];
        labels[..2372].fill(1);
        let w = class_weights(&labels).unwrap();
        assert!((w.w_pos / w.w_neg - 38188.0 / 2372.0).abs() < 1e-12);
        assert!((w.w_pos / w.w_neg - 16.10).abs() < 0.005);
        let w = class_weights(&[0, 1, 0, 1]).unwrap();
        assert_eq!((w.w_pos, w.w_neg), (1.0, 1.0));
        assert!(class_weights(&[1, 1, 1]).is_none());
    }

    #[test]
    fn bce_examples() {
        assert!((weighted_bce(0.5, 1.0, 2.0, 1.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(weighted_bce(1.0 - 1e-7, 1.0, 1.0, 1.0) < 1e-6);
        assert!((weighted_bce(1e-7, 1.0, 1.0, 1.0) - 16.118).abs() < 1e-3);
        assert_eq!(weighted_bce(0.0, 1.0, 1.0, 1.0), weighted_bce(1e-7, 1.0, 1.0, 1.0));
    }

    #[test]
    fn patience_counts_evaluated_epochs() {
        let mut s = EarlyStopping::new(4);
        let mut evaluated = 0;
        for loss in [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6] {
            evaluated += 1;
            s.record(loss);
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(evaluated, 5);
        assert_eq!(s.best_epoch(), Some(0));

        let mut s = EarlyStopping::new(2);
        for loss in [3.0, 2.0, 2.5, 1.0, 1.0, 1.5] {
            s.record(loss);
        }
        assert!(s.should_stop());
        assert_eq!(s.best_epoch(), Some(3));
        assert_eq!(s.best(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { es_fraction: 0.0, ..Default::default() },
            TrainConfig { es_fraction: 1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
