//! Teacher-forced training with AdamW, a one-cycle learning-rate schedule,
//! and early stopping on validation SARI.

mod checkpoint;
mod optim;
mod schedule;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION,
};
pub use optim::{adamw_step, clip_global_norm, OptState};
pub use schedule::{onecycle_lr, warmup_peak};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batches, Batch, EvalExample, TokenPair};
use crate::decode::{simplify_all, DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Model;
use crate::sari::{sari_corpus_with, SariItem};
use crate::tensor::{Graph, Tensor, TensorError};
use crate::tokenizer::{TokenId, Vocabulary};

/// Mixed into the seed for the dropout stream so it differs from the
/// shuffling stream.
const DROPOUT_STREAM: u64 = 0x00d2_0f0a_u64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub max_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Epochs without improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            max_lr: 1e-3,
            epochs: 20,
            batch_size: 8,
            warmup_fraction: 0.1,
            final_lr: 1e-6,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            patience: Some(3),
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr) {
            return fail(format!(
                "need 0 < base_lr ({}) <= max_lr ({})",
                self.base_lr, self.max_lr
            ));
        }
        if !(self.final_lr >= 0.0 && self.final_lr <= self.max_lr) {
            return fail(format!("final_lr {} outside [0, max_lr]", self.final_lr));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if self.patience == Some(0) {
            return fail("patience must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps_adam <= 0.0 {
            return fail("AdamW needs betas in [0, 1) and eps > 0".into());
        }
        if self.weight_decay < 0.0 || self.clip_norm.is_some_and(|c| c <= 0.0) {
            return fail("weight_decay must be >= 0 and clip_norm > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub sari: f64,
    /// Rate used for the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 before any epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub const TSV_HEADER: &'static str = "epoch\tloss\tsari\tlr";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for e in &self.epochs {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.loss, e.sari, e.lr));
        }
        s
    }

    pub fn best_sari(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.sari)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience counter over a score that should increase. Only strict
/// improvements reset the counter.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = score > self.best;
        if improved {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.patience.is_some_and(|p| self.stale >= p),
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Scores the model at the end of each epoch; higher is better.
pub trait Validator {
    fn validate(&mut self, model: &Model, epoch: usize) -> Result<f64>;
}

impl<F: FnMut(&Model, usize) -> Result<f64>> Validator for F {
    fn validate(&mut self, model: &Model, epoch: usize) -> Result<f64> {
        self(model, epoch)
    }
}

/// Greedy-decodes the validation sources and returns corpus SARI.
pub struct SariValidator<'v> {
    pub vocab: &'v Vocabulary,
    pub examples: &'v [EvalExample],
    pub max_len: usize,
    pub exec: Exec,
}

impl<'v> SariValidator<'v> {
    pub fn new(vocab: &'v Vocabulary, examples: &'v [EvalExample]) -> Self {
        SariValidator {
            vocab,
            examples,
            max_len: DecodeConfig::default().max_len,
            exec: Exec::default(),
        }
    }
}

impl Validator for SariValidator<'_> {
    fn validate(&mut self, model: &Model, _epoch: usize) -> Result<f64> {
        let cfg = DecodeConfig {
            max_len: self.max_len,
            strategy: Strategy::Greedy,
            ..Default::default()
        };
        let sources: Vec<&str> = self.examples.iter().map(|e| e.source.as_str()).collect();
        let outputs = simplify_all(self.exec, model, self.vocab, &sources, &cfg)?;
        let items: Vec<SariItem> = self
            .examples
            .iter()
            .zip(&outputs)
            .map(|(e, o)| SariItem {
                source: &e.source,
                output: o,
                references: &e.references,
            })
            .collect();
        Ok(sari_corpus_with(self.exec, &items)?.report.sari)
    }
}

/// Teacher-forced loss on `batch` and its gradient for every parameter, in
/// parameter order.
pub fn loss_and_grads(
    model: &Model,
    batch: &Batch,
    pad_id: TokenId,
    dropout: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let loss = model.loss_bound(&mut g, &p, batch, dropout, pad_id)?;
    let value = g.value(loss)[0];
    g.backward(loss)?;
    let grads = p
        .iter()
        .zip(model.params())
        .map(|(&v, param)| {
            g.grad(v)
                .map_or_else(|| vec![0.0; param.tensor.numel()], <[f64]>::to_vec)
        })
        .collect();
    Ok((value, grads))
}

/// Teacher-forced loss without dropout or gradients.
pub fn batch_loss(model: &Model, batch: &Batch, pad_id: TokenId) -> Result<f64> {
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let loss = model.loss_bound(&mut g, &p, batch, None, pad_id)?;
    Ok(g.value(loss)[0])
}

/// Trains `model` in place and leaves it holding the parameters of the best
/// validation epoch.
///
/// Each epoch reshuffles `train` with `seed + epoch`. A non-finite loss or
/// gradient aborts with [`Error::Diverged`] naming the 1-based epoch and the
/// 0-based batch index.
pub fn train_loop(
    model: &mut Model,
    train: &[TokenPair],
    validator: &mut dyn Validator,
    cfg: &TrainConfig,
    pad_id: TokenId,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let max_len = model.config().max_len;
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;

    let mut opt = OptState::new(model.params());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best: Option<Vec<Tensor>> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            train,
            cfg.batch_size,
            pad_id,
            max_len,
            Some(cfg.seed.wrapping_add(epoch as u64)),
        )?;
        let mut loss_sum = 0.0;
        let mut lr = cfg.base_lr;
        for (bi, batch) in batches.iter().enumerate() {
            lr = onecycle_lr(step, total_steps, cfg)?;
            let diverged = Error::Diverged { epoch, batch: bi };
            let (loss, mut grads) = match loss_and_grads(model, batch, pad_id, Some(&mut dropout_rng)) {
                Err(Error::Tensor(TensorError::NonFinite { .. })) => return Err(diverged),
                r => r?,
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged);
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adamw_step(model.params_mut(), &grads, &mut opt, lr, cfg)?;
            loss_sum += loss;
            step += 1;
        }
        let loss = loss_sum / batches.len() as f64;
        let sari = validator.validate(model, epoch)?;
        log::info!("epoch {epoch}: loss {loss:.4} sari {sari:.2} lr {lr:.3e}");
        history.epochs.push(EpochRecord { epoch, loss, sari, lr });

        let d = stopper.observe(epoch, sari);
        if d.improved {
            best = Some(model.params().iter().map(|p| p.tensor.clone()).collect());
            history.best_epoch = epoch;
        }
        if d.stop {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    if let Some(best) = best {
        for (p, t) in model.params_mut().iter_mut().zip(best) {
            p.tensor = t;
        }
    }
    Ok(history)
}
