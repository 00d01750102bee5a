use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{cosine_warmup_lr, write_metrics_line, EpochMetrics, OptimizerState};
use crate::data::{batch_iter, AugmentConfig, ImageRecord};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::nn::Mode;
use crate::tensor::{Graph, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub label_smoothing: f64,
    /// Seeds the per-epoch shuffle and augmentation streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            base_lr: 5e-4,
            weight_decay: 0.05,
            warmup_epochs: 5,
            min_lr: 1e-5,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup ({}) must be shorter than training ({} epochs)", self.warmup_epochs, self.epochs));
        }
        if !(self.base_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.base_lr) {
            return bad(format!("need 0 < min_lr <= base_lr, got {} and {}", self.min_lr, self.base_lr));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("weight decay must be non-negative and smoothing in [0, 1)".into());
        }
        Ok(())
    }
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn top1<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Eval-mode top-1 accuracy over `records`, in file order.
pub fn evaluate_top1<T: Scalar>(
    model: &Model<T>,
    records: &[ImageRecord],
    aug: &AugmentConfig,
    batch_size: usize,
) -> Result<f64> {
    let mut hits = 0.0;
    for batch in batch_iter::<T>(records, batch_size, aug, None, 0)? {
        let logits = model.predict(&batch.images)?;
        hits += top1(&logits, &batch.labels) * batch.labels.len() as f64;
    }
    Ok(hits / records.len() as f64)
}

/// Model, optimizer state and progress of one training run.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    pub config: TrainConfig,
    pub train_aug: AugmentConfig,
    pub eval_aug: AugmentConfig,
    /// Epochs completed.
    pub epoch: usize,
    /// Loss of every optimizer step so far.
    pub step_losses: Vec<f64>,
    pub history: Vec<EpochMetrics>,
    /// Where per-epoch checkpoints and `metrics.jsonl` go.
    pub out_dir: Option<PathBuf>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, train_aug: AugmentConfig, eval_aug: AugmentConfig) -> Result<Self> {
        config.validate()?;
        train_aug.validate()?;
        eval_aug.validate()?;
        let side = model.config.resolution;
        if train_aug.output_side() != side || eval_aug.output_side() != side {
            return Err(Error::Config(format!(
                "augmentation produces {}px images but the model expects {side}px",
                train_aug.output_side()
            )));
        }
        Ok(Self {
            model,
            optimizer: OptimizerState::new(),
            config,
            train_aug,
            eval_aug,
            epoch: 0,
            step_losses: Vec::new(),
            history: Vec::new(),
            out_dir: None,
        })
    }

    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.config.batch_size) as u64
    }

    /// Trains one epoch; returns its mean loss, accuracy on the augmented
    /// training batches, and the last learning rate.
    pub fn train_epoch(&mut self, train: &[ImageRecord]) -> Result<(f64, f64, f64)> {
        let spe = self.steps_per_epoch(train.len());
        let cfg = self.config.clone();
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0.0, 0.0);
        let batches = batch_iter::<T>(train, cfg.batch_size, &self.train_aug, Some(cfg.seed), self.epoch as u64)?;
        for (i, batch) in batches.enumerate() {
            lr = cosine_warmup_lr(self.epoch as u64 * spe + i as u64, spe, &cfg);
            let g = Graph::new();
            let logits = self.model.forward(&g, g.leaf(batch.images, false), Mode::Train)?;
            let loss = logits.cross_entropy(&batch.labels, cfg.label_smoothing)?;
            let value = loss.value().item().to_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            let n = batch.labels.len() as f64;
            hits += top1(&logits.value(), &batch.labels) * n;
            let grads = g.backward(loss)?;
            self.optimizer.step_with(&mut self.model, &grads, lr, cfg.weight_decay)?;
            loss_sum += value * n;
            self.step_losses.push(value);
        }
        self.epoch += 1;
        let n = train.len() as f64;
        Ok((loss_sum / n, hits / n, lr))
    }

    /// Runs the remaining epochs, evaluating on `test` after each one and
    /// writing a checkpoint and a metrics line when an output directory is
    /// set.
    pub fn run(&mut self, train: &[ImageRecord], test: Option<&[ImageRecord]>) -> Result<Vec<EpochMetrics>> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut log = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("metrics.jsonl");
                Some(BufWriter::new(File::options().create(true).append(true).open(path)?))
            }
            None => None,
        };
        while self.epoch < self.config.epochs {
            let (train_loss, train_top1, lr) = self.train_epoch(train)?;
            let test_top1 = match test {
                Some(t) if !t.is_empty() => Some(evaluate_top1(&self.model, t, &self.eval_aug, self.config.batch_size)?),
                _ => None,
            };
            let m = EpochMetrics { epoch: self.epoch, lr, train_loss, train_top1, test_top1 };
            if let (Some(dir), Some(w)) = (&self.out_dir, log.as_mut()) {
                self.save(dir.join(format!("epoch-{}.ckpt", self.epoch)))?;
                write_metrics_line(w, &m)?;
                std::io::Write::flush(w)?;
            }
            self.history.push(m);
        }
        Ok(self.history.clone())
    }

    /// Parameters, running statistics and optimizer moments. The stored
    /// step counts completed epochs; the optimizer step is derived from it.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ckpt = self.model.to_checkpoint(self.epoch as u64);
        ckpt.entries.extend(self.optimizer.entries());
        ckpt
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Restores model and optimizer from a checkpoint written by
    /// [`Trainer::save`], given the training set size to recover the step.
    pub fn resume(&mut self, ckpt: &Checkpoint<T>, train_len: usize) -> Result<()> {
        let cfg = ModelConfig::parse(&ckpt.config)?;
        if cfg != self.model.config {
            return Err(Error::CheckpointShape("checkpoint was written for a different model config".into()));
        }
        self.model.load_state(ckpt)?;
        let step = ckpt.step * self.steps_per_epoch(train_len);
        self.optimizer = OptimizerState::from_entries(&ckpt.entries, step, &self.model)?;
        self.epoch = ckpt.step as usize;
        Ok(())
    }
}

/// Builds a [`Trainer`] and runs it to completion.
pub fn train_epochs<T: Scalar>(
    model: Model<T>,
    train: &[ImageRecord],
    test: Option<&[ImageRecord]>,
    cfg: &TrainConfig,
    train_aug: AugmentConfig,
    eval_aug: AugmentConfig,
    out_dir: Option<&Path>,
) -> Result<Trainer<T>> {
    let mut t = Trainer::new(model, cfg.clone(), train_aug, eval_aug)?;
    if let Some(dir) = out_dir {
        t = t.with_output(dir);
    }
    t.run(train, test)?;
    Ok(t)
}
