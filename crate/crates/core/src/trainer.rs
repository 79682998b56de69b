//! Joint training of encoder, prompt transform and scorer on next-item
//! cross-entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{examples_from_sessions, Example, SplitDataset};
use crate::error::{Error, Result};
use crate::model::{DuipModel, DuipParams, ModelConfig};
use crate::optim::{clip_global_norm, Adam};
use crate::rng::Rng;

/// Examples per gradient-accumulation chunk; chunk sums are reduced in index
/// order.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub early_stop_patience: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            early_stop_patience: 3,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "batch_size and early_stop_patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip_norm > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config(
                "learning_rate, grad_clip_norm and adam_eps must be positive".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        self.model.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation split yields no scorable example.
    pub valid_loss: Option<f64>,
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainReport {
    /// `epoch,train_loss,valid_loss` with one row per epoch run.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.log {
            let valid = e.valid_loss.map_or_else(String::new, |v| format!("{v:.6}"));
            out.push_str(&format!("{},{:.6},{}\n", e.epoch, e.train_loss, valid));
        }
        out
    }
}

/// Mean loss and mean gradient over `batch`, reduced in a fixed order.
pub fn batch_gradient(model: &DuipModel, batch: &[&Example]) -> Result<(f64, DuipParams)> {
    let partials: Vec<Result<(f64, DuipParams)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = model.params.zeros_like();
            let mut loss = 0.0;
            for ex in chunk {
                loss += model.loss_and_grad(ex, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut acc: Option<DuipParams> = None;
    for part in partials {
        let (loss, grads) = part?;
        total += loss;
        match acc.as_mut() {
            Some(a) => a.accumulate(&grads),
            None => acc = Some(grads),
        }
    }
    let mut grads = acc.unwrap_or_else(|| model.params.zeros_like());
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean loss over `examples`, or `None` if there are none.
pub fn mean_loss(model: &DuipModel, examples: &[Example]) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let losses: Vec<Result<f64>> = examples.par_iter().map(|ex| model.forward_loss(ex)).collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(Some(sum / examples.len() as f64))
}

/// Drops examples whose target is outside the item range (UNK targets).
pub fn scorable_examples(examples: Vec<Example>, n_items: usize) -> Vec<Example> {
    examples.into_iter().filter(|e| e.target < n_items).collect()
}

/// One optimizer step on `batch`: mean gradient, global-norm clip, Adam.
/// Returns the batch's mean loss before the update.
pub fn train_step(model: &mut DuipModel, adam: &mut Adam, batch: &[&Example], clip_norm: f64) -> Result<f64> {
    let (loss, mut grads) = batch_gradient(model, batch)?;
    clip_global_norm(&mut grads, clip_norm);
    adam.update(&mut model.params, &grads);
    Ok(loss)
}

/// Trains from a fresh, seeded model. Mini-batches are reshuffled every epoch;
/// after each epoch the validation loss decides whether the current weights
/// become the new best, and training stops after `early_stop_patience`
/// epochs without improvement. The returned checkpoint holds the best weights.
pub fn train_with_log(config: &TrainConfig, split: &SplitDataset) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let mut model = DuipModel::new(config.model.clone(), split.vocab.clone(), &mut rng)?;
    let n_items = model.n_items();
    let train = scorable_examples(examples_from_sessions(&split.train), n_items);
    if train.is_empty() {
        return Err(Error::domain("training split yields no (prefix, next item) examples"));
    }
    let valid = scorable_examples(examples_from_sessions(&split.valid), n_items);

    let mut adam = Adam::new(
        &model.params,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut best = Checkpoint::capture(config, &model, &adam, 0);
    let mut best_score = f64::INFINITY;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = batch_idx.iter().map(|&i| &train[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch, config.grad_clip_norm)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let valid_loss = mean_loss(&model, &valid)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
        });

        let score = valid_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            best = Checkpoint::capture(config, &model, &adam, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainReport { checkpoint: best, log })
}

pub fn train(config: &TrainConfig, split: &SplitDataset) -> Result<Checkpoint> {
    train_with_log(config, split).map(|r| r.checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemVocab;
    use crate::prompt::TransformMode;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_in: 6,
            d_h: 6,
            d_lm: 8,
            d_ff: 8,
            n_layers: 1,
            n_heads: 2,
            m: 2,
            max_hard_len: 4,
            max_len: 8,
            prompt_mode: TransformMode::Affine,
            d_f: 4,
        }
    }

    #[test]
    fn one_step_decreases_loss_on_that_example() {
        let vocab = ItemVocab::from_ids((0..6).map(|i| format!("i{i}")));
        let mut model = DuipModel::new(tiny(), vocab, &mut Rng::new(1)).unwrap();
        let ex = Example {
            prefix: vec![0, 3],
            target: 4,
        };
        let before = model.forward_loss(&ex).unwrap();
        let mut adam = Adam::new(&model.params, 1e-3, 0.9, 0.999, 1e-8);
        train_step(&mut model, &mut adam, &[&ex], 5.0).unwrap();
        let after = model.forward_loss(&ex).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn single_example_overfits() {
        let vocab = ItemVocab::from_ids((0..6).map(|i| format!("i{i}")));
        let mut model = DuipModel::new(tiny(), vocab, &mut Rng::new(1)).unwrap();
        let ex = Example {
            prefix: vec![2, 5, 1],
            target: 3,
        };
        let mut adam = Adam::new(&model.params, 1e-2, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            train_step(&mut model, &mut adam, &[&ex], 5.0).unwrap();
        }
        let loss = model.forward_loss(&ex).unwrap();
        assert!(loss < 1e-2, "loss {loss}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let vocab = ItemVocab::from_ids((0..6).map(|i| format!("i{i}")));
        let model = DuipModel::new(tiny(), vocab, &mut Rng::new(1)).unwrap();
        let ex = Example {
            prefix: vec![0],
            target: 1,
        };
        let (_, mut g) = batch_gradient(&model, &[&ex]).unwrap();
        g.scale(1e3);
        let before = clip_global_norm(&mut g, 0.5);
        assert!(before > 0.5);
        assert!(g.global_norm() <= 0.5 + 1e-9);
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let vocab = ItemVocab::from_ids((0..6).map(|i| format!("i{i}")));
        let model = DuipModel::new(tiny(), vocab, &mut Rng::new(1)).unwrap();
        let exs: Vec<Example> = (0..11)
            .map(|i| Example {
                prefix: vec![i % 6],
                target: (i + 1) % 6,
            })
            .collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let (loss, g) = batch_gradient(&model, &refs).unwrap();
        let mut manual = model.params.zeros_like();
        let mut manual_loss = 0.0;
        for e in &exs {
            manual_loss += model.loss_and_grad(e, &mut manual).unwrap();
        }
        manual.scale(1.0 / 11.0);
        assert!((loss - manual_loss / 11.0).abs() < 1e-12);
        for ((_, a), (_, b)) in g.tensors().iter().zip(manual.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let c = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
