//! Training: batched binary cross-entropy, Adam and a plateau scheduler.

mod adam;
mod baseline;
mod config;
mod scheduler;
mod split;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use baseline::LogisticBaseline;
pub use config::{ModelOverrides, TrainConfig};
pub use scheduler::PlateauScheduler;
pub use split::split_train_eval;

use crate::autodiff::{Tape, Var, BCE_CLAMP};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::layers::{ForwardOptions, Model};
use crate::metrics::{auroc, ScoredLabel};

/// Mean binary cross-entropy of `predictions` (a column) against 0/1 labels.
pub fn bce_loss(tape: &mut Tape, predictions: Var, labels: &[f64]) -> Result<Var> {
    tape.bce(predictions, labels)
}

/// Same quantity as [`bce_loss`] on plain values.
pub fn bce_value(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("bce_value", &[predictions.len()], &[labels.len()]));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("cross-entropy over zero predictions".into()));
    }
    let mut total = 0.0;
    for (&y, &c) in predictions.iter().zip(labels) {
        if c != 0.0 && c != 1.0 {
            return Err(Error::Contract(format!("label {c} is not 0 or 1")));
        }
        let y = y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= c * y.ln() + (1.0 - c) * (1.0 - y).ln();
    }
    Ok(total / predictions.len() as f64)
}

/// Mixes a run seed with stream tags into an independent 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// Zero-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// `None` when the evaluation split is empty.
    pub eval_loss: Option<f64>,
    /// `None` when the evaluation split lacks one of the classes.
    pub eval_auroc: Option<f64>,
    /// Learning rate after this epoch's scheduler step.
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub reports: Vec<EpochReport>,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

/// Stepwise training driver. [`train`] runs it to completion.
pub struct Trainer<'g> {
    graph: &'g HeteroGraph,
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    scheduler: PlateauScheduler,
    targets: Vec<f64>,
    train_indices: Vec<usize>,
    eval_indices: Vec<usize>,
    reports: Vec<EpochReport>,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g HeteroGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (train_indices, eval_indices) =
            split_train_eval(graph.variant_count(), config.eval_fraction, derive_seed(config.seed, &[STREAM_SPLIT]))?;
        let model = Model::new(
            config.mode,
            config.model_config(),
            graph.gene_count(),
            graph.feature_dim(),
            derive_seed(config.seed, &[STREAM_INIT]),
        )?;
        Ok(Self::with_model(graph, config, model, train_indices, eval_indices))
    }

    /// Starts from an existing model and a caller-chosen split.
    pub fn with_model(
        graph: &'g HeteroGraph,
        config: TrainConfig,
        model: Model,
        train_indices: Vec<usize>,
        eval_indices: Vec<usize>,
    ) -> Self {
        let targets = graph.variants().iter().map(|v| v.label.training_target()).collect();
        let adam = AdamState::new(&model.store, config.initial_lr);
        let scheduler = PlateauScheduler::new(
            config.initial_lr,
            config.plateau_factor,
            config.plateau_patience_epochs,
            config.plateau_min_delta,
        );
        Self {
            graph,
            config,
            model,
            adam,
            scheduler,
            targets,
            train_indices,
            eval_indices,
            reports: Vec::new(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn reports(&self) -> &[EpochReport] {
        &self.reports
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    /// One pass over the shuffled training split plus evaluation.
    pub fn run_epoch(&mut self) -> Result<&EpochReport> {
        let epoch = self.reports.len();
        let train_loss = self.train_batches(epoch)?;
        let (eval_loss, eval_auroc) = self.evaluate()?;
        Ok(self.finish_epoch(train_loss, eval_loss, eval_auroc))
    }

    fn train_batches(&mut self, epoch: usize) -> Result<f64> {
        let mut order = self.train_indices.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[STREAM_SHUFFLE, epoch as u64],
        )));
        let mut weighted_loss = 0.0;
        let mut tape = Tape::new();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let divergence = |loss: f64| Error::Divergence { epoch, batch: b, loss };
            tape.reset();
            let opts = ForwardOptions::train(derive_seed(self.config.seed, &[STREAM_DROPOUT, epoch as u64, b as u64]));
            let out = self.model.forward(&mut tape, self.graph, opts).map_err(|e| match e {
                Error::NonFinite(_) => divergence(f64::NAN),
                other => other,
            })?;
            let picked = tape.gather_rows(out.probabilities, Arc::new(batch.to_vec()))?;
            let labels: Vec<f64> = batch.iter().map(|&i| self.targets[i]).collect();
            let loss = bce_loss(&mut tape, picked, &labels).map_err(|e| match e {
                Error::NonFinite(_) => divergence(f64::NAN),
                other => other,
            })?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(divergence(value));
            }
            self.model.store.zero_grad();
            tape.backward(loss, &mut self.model.store)?;
            if self.model.store.iter().any(|p| !p.grad().is_finite()) {
                return Err(divergence(value));
            }
            self.adam.step(&mut self.model.store)?;
            weighted_loss += value * batch.len() as f64;
        }
        Ok(weighted_loss / self.train_indices.len().max(1) as f64)
    }

    /// Loss and auROC on the evaluation split with the current parameters.
    pub fn evaluate(&self) -> Result<(Option<f64>, Option<f64>)> {
        if self.eval_indices.is_empty() {
            return Ok((None, None));
        }
        let probs = self.model.predict(self.graph)?;
        let preds: Vec<f64> = self.eval_indices.iter().map(|&i| probs[i]).collect();
        let labels: Vec<f64> = self.eval_indices.iter().map(|&i| self.targets[i]).collect();
        let loss = bce_value(&preds, &labels)?;
        let items: Vec<ScoredLabel> = preds.iter().zip(&labels).map(|(&s, &l)| ScoredLabel::new(s, l == 1.0)).collect();
        let auc = match auroc(&items) {
            Ok(a) => Some(a),
            Err(Error::DegenerateMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok((Some(loss), auc))
    }

    /// Closes an epoch: steps the scheduler on the evaluation loss (training
    /// loss when there is no evaluation split) and records the report.
    pub fn finish_epoch(&mut self, train_loss: f64, eval_loss: Option<f64>, eval_auroc: Option<f64>) -> &EpochReport {
        let lr = self.scheduler.step(eval_loss.unwrap_or(train_loss));
        self.adam.lr = lr;
        self.reports.push(EpochReport {
            epoch: self.reports.len(),
            train_loss,
            eval_loss,
            eval_auroc,
            lr,
        });
        self.reports.last().expect("just pushed")
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            reports: self.reports,
            train_indices: self.train_indices,
            eval_indices: self.eval_indices,
        }
    }
}

/// Runs `config.epochs` epochs over `graph`, whose variant labels drive the loss.
pub fn train(graph: &HeteroGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(graph, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(graph: &HeteroGraph, config: &TrainConfig, mut on_epoch: impl FnMut(&EpochReport)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(graph, config.clone())?;
    for _ in 0..config.epochs {
        on_epoch(trainer.run_epoch()?);
    }
    Ok(trainer.finish())
}
