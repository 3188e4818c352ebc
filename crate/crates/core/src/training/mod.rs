//! The optimization protocol: mini-batch Adam on binary cross-entropy,
//! reduce-on-plateau learning-rate decay, early stopping with best-epoch
//! restoration, and file-level k-fold splits.

mod config;
mod data;
mod schedule;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

pub use config::{FoldSelection, TrainConfig};
pub use data::{make_folds, FoldSplit, SegmentSet};
pub use schedule::{EpochDecision, PlateauController};

use crate::error::{Error, Result};
use crate::models::{Mode, ModelGraph};
use crate::rng;
use crate::tensor::{Adam, Tape, Tensor};

/// Standalone recurrent models accumulate gradients over micro-batches of
/// this size. Without batch norm the result equals one full-batch step
/// (up to summation order) while the per-step caches of 7350-step
/// sequences stay bounded.
pub const RECURRENT_MICRO_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early-stop",
            StopReason::MaxEpochs => "max-epochs",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_reason: StopReason,
}

impl TrainHistory {
    /// `epoch\ttrain_loss\tval_loss\tlr\tseconds` lines after a header.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# epoch\ttrain_loss\tval_loss\tlr\tseconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6e}\t{:.2}",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
            );
        }
        let _ = writeln!(out, "# best_epoch {}", self.best_epoch);
        let _ = writeln!(out, "# stopped {}", self.stopped_reason.as_str());
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// What a batch hook sees after each optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct BatchRecord<'s> {
    pub epoch: usize,
    pub batch: usize,
    /// Indices into the training [`SegmentSet`].
    pub segments: &'s [usize],
    pub loss: f64,
}

pub type BatchHook<'a> = Box<dyn FnMut(&BatchRecord<'_>) + 'a>;
pub type EpochHook<'a> = Box<dyn FnMut(&EpochRecord) + 'a>;

/// Observers for a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_batch: Option<BatchHook<'a>>,
    pub on_epoch: Option<EpochHook<'a>>,
}

/// Mean BCE over the whole set in infer mode.
pub fn evaluate_loss(graph: &ModelGraph<f32>, set: &SegmentSet, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = set.batch(chunk);
        total += batch_loss(graph, &x, &y, Mode::Infer)? * chunk.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

fn batch_loss(graph: &ModelGraph<f32>, x: &Tensor<f32>, y: &Tensor<f32>, mode: Mode) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = graph.logits_pure(&mut tape, xv, mode)?;
    let loss = tape.bce_with_logits(logits, y)?;
    Ok(f64::from(tape.value(loss).data()[0]))
}

/// Forward, backward and gradient accumulation for one batch; returns the
/// batch's mean loss.
fn accumulate_batch(graph: &mut ModelGraph<f32>, set: &SegmentSet, idx: &[usize]) -> Result<f64> {
    let micro = if graph.variant().is_standalone_bigru() {
        RECURRENT_MICRO_BATCH
    } else {
        idx.len()
    };
    let mut loss_sum = 0.0;
    for part in idx.chunks(micro.max(1)) {
        let (x, y) = set.batch(part);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = graph.forward_logits(&mut tape, xv, Mode::Train)?;
        let loss = tape.bce_with_logits(logits, &y)?;
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {value}")));
        }
        loss_sum += value * part.len() as f64;
        let root = if part.len() == idx.len() {
            loss
        } else {
            tape.scale(loss, part.len() as f32 / idx.len() as f32)
        };
        tape.backward(root)?.accumulate_into(&tape, graph.params_mut());
    }
    Ok(loss_sum / idx.len() as f64)
}

/// Trains `graph` on `train`, monitoring `validation`, and leaves the
/// best-validation-loss parameters in the graph.
pub fn train_model(
    graph: &mut ModelGraph<f32>,
    train: &SegmentSet,
    validation: &SegmentSet,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    train_model_with(graph, train, validation, config, &mut TrainHooks::default())
}

pub fn train_model_with(
    graph: &mut ModelGraph<f32>,
    train: &SegmentSet,
    validation: &SegmentSet,
    config: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training view is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation view is empty".into()));
    }
    let mut shuffle_rng = rng::stream(config.seed, rng::SHUFFLE);
    let mut control = PlateauController::new(
        config.lr_init,
        config.lr_decay_factor,
        config.lr_patience_epochs,
        config.early_stop_patience,
    );
    let mut adam = Adam::new(config.lr_init);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best_snapshot = graph.params().snapshot();
    let mut stopped = StopReason::MaxEpochs;
    graph.params_mut().zero_grads();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let lr = control.lr();
        adam.lr = lr;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let loss = accumulate_batch(graph, train, idx).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            adam.step(graph.params_mut())?;
            loss_sum += loss * idx.len() as f64;
            if let Some(f) = hooks.on_batch.as_mut() {
                f(&BatchRecord {
                    epoch,
                    batch: b,
                    segments: idx,
                    loss,
                });
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = evaluate_loss(graph, validation, config.batch_size)?;
        let decision = control.observe(val_loss);
        if decision.improved {
            best_snapshot = graph.params().snapshot();
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}{}",
            if decision.improved { " *" } else { "" }
        );
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&record);
        }
        epochs.push(record);
        if decision.stop {
            stopped = StopReason::EarlyStop;
            break;
        }
    }
    graph.params_mut().restore(&best_snapshot)?;
    Ok(TrainHistory {
        epochs,
        best_epoch: control.best_epoch().unwrap_or(0),
        stopped_reason: stopped,
    })
}

/// Result of [`overfit_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Capacity check: full-batch-per-epoch Adam on a small fixed set with no
/// validation. The reported losses are deterministic evaluations of the
/// whole set (batch statistics for BN models, no dropout). With
/// `target = Some(t)` training stops as soon as the loss falls below `t`.
pub fn overfit_probe(
    graph: &mut ModelGraph<f32>,
    set: &SegmentSet,
    epochs: usize,
    lr: f64,
    target: Option<f64>,
) -> Result<ProbeResult> {
    if set.is_empty() {
        return Err(Error::Config("overfit probe needs at least one segment".into()));
    }
    let mode = if graph.variant().has_batch_norm() {
        Mode::Train
    } else {
        Mode::Infer
    };
    let idx: Vec<usize> = (0..set.len()).collect();
    let (x, y) = set.batch(&idx);
    let initial = batch_loss(graph, &x, &y, mode)?;
    let adam = Adam::new(lr);
    let mut loss = initial;
    let mut run = 0;
    graph.params_mut().zero_grads();
    while run < epochs && target.is_none_or(|t| loss >= t) {
        accumulate_batch(graph, set, &idx)?;
        adam.step(graph.params_mut())?;
        run += 1;
        loss = batch_loss(graph, &x, &y, mode)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "overfit probe loss {loss} after epoch {run}"
            )));
        }
    }
    Ok(ProbeResult {
        initial_loss: initial,
        final_loss: loss,
        epochs_run: run,
    })
}
