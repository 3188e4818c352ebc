//! The six instrument-recognition architectures and their shared forward
//! interface: a waveform batch `[b, 1, 22050]` in, `[b, 11]` activations out.
//!
//! Every parameter is initialized from a random stream named after the
//! parameter itself, so two graphs built from the same seed agree on every
//! parameter they have in common (an RFCN shares all of an FCN's weights,
//! a CRNN all of an RFCN's).

mod checkpoint;
mod cnn;
mod layers;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tensor::gradcheck::{self, GradCheckReport, Probe};
use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};
use crate::{NUM_LABELS, SEGMENT_LEN};

pub use checkpoint::{load_checkpoint, peek_variant, save_checkpoint, CHECKPOINT_MAGIC};
pub use cnn::{CnnCellConfig, CANONICAL_CELLS};

use cnn::{CnnStack, StatUpdates};
use layers::{BiGru, Conv, Dense};

/// Pool size applied to the raw waveform in front of the standalone BiGRUs.
pub const BIGRU_INPUT_POOL: usize = 3;
/// Dropout rate in front of the BiGRU output layer.
pub const BIGRU_DROPOUT: f64 = 0.5;
/// Hidden width of the DCNN's first dense layer.
pub const DCNN_HIDDEN: usize = 1024;

/// Recurrent widths of the BiGRU stack used as the CRNN branch.
const CRNN_BRANCH_UNITS: [usize; 2] = [128, 64];

/// Model variant, spelled on the command line as its tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    BiGru1x128,
    BiGru1x256,
    BiGru2x128x64,
    Dcnn,
    Fcn,
    Rfcn,
    /// BiGRU branch attached after CNN cell `k` (2..=5).
    Crnn(u8),
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::BiGru1x128,
        Variant::BiGru1x256,
        Variant::BiGru2x128x64,
        Variant::Dcnn,
        Variant::Fcn,
        Variant::Rfcn,
        Variant::Crnn(2),
        Variant::Crnn(3),
        Variant::Crnn(4),
        Variant::Crnn(5),
    ];

    pub fn tag(self) -> String {
        match self {
            Variant::BiGru1x128 => "bigru1-128".into(),
            Variant::BiGru1x256 => "bigru1-256".into(),
            Variant::BiGru2x128x64 => "bigru2".into(),
            Variant::Dcnn => "dcnn".into(),
            Variant::Fcn => "fcn".into(),
            Variant::Rfcn => "rfcn".into(),
            Variant::Crnn(k) => format!("crnn{k}"),
        }
    }

    /// Recurrent widths of a standalone BiGRU variant.
    fn bigru_units(self) -> Option<&'static [usize]> {
        match self {
            Variant::BiGru1x128 => Some(&[128]),
            Variant::BiGru1x256 => Some(&[256]),
            Variant::BiGru2x128x64 => Some(&[128, 64]),
            _ => None,
        }
    }

    pub fn is_standalone_bigru(self) -> bool {
        self.bigru_units().is_some()
    }

    pub fn has_batch_norm(self) -> bool {
        !self.is_standalone_bigru()
    }

    fn validate(self) -> Result<Self> {
        match self {
            Variant::Crnn(k) if !(2..=5).contains(&k) => Err(Error::Config(format!(
                "CRNN branch position must be 2..=5, got {k}"
            ))),
            v => Ok(v),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "bigru1-128" => Variant::BiGru1x128,
            "bigru1-256" => Variant::BiGru1x256,
            "bigru2" => Variant::BiGru2x128x64,
            "dcnn" => Variant::Dcnn,
            "fcn" => Variant::Fcn,
            "rfcn" => Variant::Rfcn,
            _ => match s.strip_prefix("crnn").and_then(|k| k.parse::<u8>().ok()) {
                Some(k) => Variant::Crnn(k),
                None => {
                    let known: Vec<String> = Variant::ALL.iter().map(|v| v.tag()).collect();
                    return Err(Error::Config(format!(
                        "unknown model '{s}' (expected one of {})",
                        known.join(", ")
                    )));
                }
            },
        };
        v.validate()
    }
}

/// Train mode uses batch statistics in batch norm (and updates the running
/// averages) and enables dropout; infer mode uses the running averages and
/// disables dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
enum Arch {
    BiGru {
        layers: Vec<BiGru>,
        output: Dense,
    },
    Dcnn {
        stack: CnnStack,
        fc1: Dense,
        fc2: Dense,
    },
    /// FCN, or RFCN when the stack carries skips.
    Fcn {
        stack: CnnStack,
        head: Conv,
    },
    Crnn {
        stack: CnnStack,
        head: Conv,
        k: usize,
        branch: Vec<BiGru>,
        branch_head: Conv,
    },
}

/// A built model: its parameters plus the wiring that uses them.
#[derive(Debug)]
pub struct ModelGraph<T: Real> {
    variant: Variant,
    input_len: usize,
    params: ParamStore<T>,
    arch: Arch,
    dropout_rng: StreamRng,
    /// Whether BN running statistics have been trained or loaded.
    stats_ready: bool,
    warned_fresh_stats: AtomicBool,
}

impl<T: Real> Clone for ModelGraph<T> {
    fn clone(&self) -> Self {
        ModelGraph {
            variant: self.variant,
            input_len: self.input_len,
            params: self.params.clone(),
            arch: self.arch.clone(),
            dropout_rng: self.dropout_rng.clone(),
            stats_ready: self.stats_ready,
            warned_fresh_stats: AtomicBool::new(self.warned_fresh_stats.load(Ordering::Relaxed)),
        }
    }
}

fn bigru_stack<T: Real>(
    store: &mut ParamStore<T>,
    seed: u64,
    prefix: &str,
    n_in: usize,
    units: &[usize],
) -> Vec<BiGru> {
    let mut n = n_in;
    units
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let layer = BiGru::new(store, seed, &format!("{prefix}{}", i + 1), n, h);
            n = 2 * h;
            layer
        })
        .collect()
}

impl<T: Real> ModelGraph<T> {
    /// Builds `variant` for the standard 22050-sample input.
    pub fn build(variant: Variant, seed: u64) -> Result<Self> {
        Self::build_with_input_len(variant, seed, SEGMENT_LEN)
    }

    /// Builds `variant` for inputs of `input_len` samples. Only the DCNN's
    /// flatten width depends on the length; shorter inputs exist to keep
    /// finite-difference checks of whole models affordable.
    pub fn build_with_input_len(variant: Variant, seed: u64, input_len: usize) -> Result<Self> {
        let variant = variant.validate()?;
        let mut store = ParamStore::new();
        let arch = match variant {
            v if v.is_standalone_bigru() => {
                let units = v.bigru_units().expect("bigru variant");
                if input_len / BIGRU_INPUT_POOL == 0 {
                    return Err(Error::Config(format!(
                        "input length {input_len} too short for {v}"
                    )));
                }
                let layers = bigru_stack(&mut store, seed, "bigru", 1, units);
                let last = 2 * units[units.len() - 1];
                let output = Dense::new(&mut store, seed, "output", last, NUM_LABELS);
                Arch::BiGru { layers, output }
            }
            Variant::Dcnn => {
                let stack = CnnStack::new(&mut store, seed, &CANONICAL_CELLS, false);
                let steps = Self::checked_final_len(&stack, input_len)?;
                let flat = stack.out_channels() * steps;
                let fc1 = Dense::new(&mut store, seed, "dense1", flat, DCNN_HIDDEN);
                let fc2 = Dense::new(&mut store, seed, "dense2", DCNN_HIDDEN, NUM_LABELS);
                Arch::Dcnn { stack, fc1, fc2 }
            }
            Variant::Fcn | Variant::Rfcn => {
                let stack = CnnStack::new(&mut store, seed, &CANONICAL_CELLS, variant == Variant::Rfcn);
                Self::checked_final_len(&stack, input_len)?;
                let head = Conv::new(&mut store, seed, "head", stack.out_channels(), NUM_LABELS, 1);
                Arch::Fcn { stack, head }
            }
            Variant::Crnn(k) => {
                let k = usize::from(k);
                let stack = CnnStack::new(&mut store, seed, &CANONICAL_CELLS, true);
                Self::checked_final_len(&stack, input_len)?;
                let head = Conv::new(&mut store, seed, "head", stack.out_channels(), NUM_LABELS, 1);
                let feat = CANONICAL_CELLS[k - 1].filters;
                let branch = bigru_stack(&mut store, seed, "branch.bigru", feat, &CRNN_BRANCH_UNITS);
                let width = 2 * CRNN_BRANCH_UNITS[CRNN_BRANCH_UNITS.len() - 1];
                let branch_head = Conv::new(&mut store, seed, "branch.head", width, NUM_LABELS, 1);
                Arch::Crnn {
                    stack,
                    head,
                    k,
                    branch,
                    branch_head,
                }
            }
            _ => unreachable!("all variants handled"),
        };
        Ok(ModelGraph {
            variant,
            input_len,
            params: store,
            arch,
            dropout_rng: rng::stream(seed, rng::DROPOUT),
            stats_ready: !variant.has_batch_norm(),
            warned_fresh_stats: AtomicBool::new(false),
        })
    }

    fn checked_final_len(stack: &CnnStack, input_len: usize) -> Result<usize> {
        match stack.lengths(input_len).last() {
            Some(&l) if l > 0 => Ok(l),
            _ => Err(Error::Config(format!(
                "input length {input_len} vanishes in the pooling cascade"
            ))),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Parameter element count in the Keras "total params" convention:
    /// trainable weights plus batch-norm running statistics.
    pub fn param_count(&self) -> usize {
        self.params.total_count()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Output length of every CNN cell, or `None` for the standalone BiGRUs.
    pub fn cell_lengths(&self) -> Option<Vec<usize>> {
        self.stack().map(|s| s.lengths(self.input_len))
    }

    /// `(features, steps)` of the sequence fed to a CRNN's recurrent branch.
    pub fn branch_input_dims(&self) -> Option<(usize, usize)> {
        match &self.arch {
            Arch::Crnn { stack, k, .. } => Some((
                stack.cells[k - 1].cfg.filters,
                stack.lengths(self.input_len)[k - 1],
            )),
            _ => None,
        }
    }

    fn stack(&self) -> Option<&CnnStack> {
        match &self.arch {
            Arch::BiGru { .. } => None,
            Arch::Dcnn { stack, .. } | Arch::Fcn { stack, .. } | Arch::Crnn { stack, .. } => Some(stack),
        }
    }

    /// Marks batch-norm running statistics as meaningful (after loading).
    pub(crate) fn mark_stats_ready(&mut self) {
        self.stats_ready = true;
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            [b, 1, l] if *b > 0 && *l == self.input_len => Ok(()),
            _ => Err(Error::shape(format!(
                "model input must be [batch, 1, {}], got {shape:?}",
                self.input_len
            ))),
        }
    }

    /// Pre-sigmoid class scores `[b, 11]`. Train mode advances the dropout
    /// stream and folds batch statistics into the BN running averages.
    pub fn forward_logits(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut updates = StatUpdates::new();
        let mut rng = self.dropout_rng.clone();
        let dropout = (mode == Mode::Train).then_some(&mut rng);
        let out = self.run(tape, x, mode, dropout, &mut updates)?;
        self.dropout_rng = rng;
        for (bn, stats) in &updates {
            bn.update_running(&mut self.params, stats);
        }
        if mode == Mode::Train {
            self.stats_ready = true;
        }
        Ok(out)
    }

    /// Class activations in `(0, 1)`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let logits = self.forward_logits(tape, x, mode)?;
        Ok(tape.sigmoid(logits))
    }

    /// Pure pre-sigmoid scores: `Train` here means batch statistics without
    /// touching the running averages, and never applies dropout.
    pub fn logits_pure(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.run(tape, x, mode, None, &mut StatUpdates::new())
    }

    /// Infer-mode activations for a batch; usable concurrently on a shared graph.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let logits = self.logits_pure(&mut tape, x, Mode::Infer)?;
        let p = tape.sigmoid(logits);
        Ok(tape.value(p).clone())
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        dropout: Option<&mut StreamRng>,
        updates: &mut StatUpdates,
    ) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        if mode == Mode::Infer && !self.stats_ready && !self.warned_fresh_stats.swap(true, Ordering::Relaxed)
        {
            log::warn!(
                "{}: infer-mode forward with untrained batch-norm statistics",
                self.variant
            );
        }
        let p = &self.params;
        match &self.arch {
            Arch::BiGru { layers, output } => {
                let pooled = tape.maxpool1d(x, BIGRU_INPUT_POOL)?;
                let mut h = tape.transpose(pooled)?;
                for layer in &layers[..layers.len() - 1] {
                    h = layer.sequence(tape, p, h)?;
                }
                let state = layers[layers.len() - 1].final_state(tape, p, h)?;
                let state = match dropout {
                    Some(rng) => tape.dropout(state, BIGRU_DROPOUT, mode == Mode::Train, rng)?,
                    None => state,
                };
                output.apply(tape, p, state)
            }
            Arch::Dcnn { stack, fc1, fc2 } => {
                let outs = stack.forward(tape, p, x, mode, updates)?;
                let flat = tape.flatten(*outs.last().expect("cells"))?;
                let h = fc1.apply(tape, p, flat)?;
                let h = tape.leaky_relu(h);
                fc2.apply(tape, p, h)
            }
            Arch::Fcn { stack, head } => {
                let outs = stack.forward(tape, p, x, mode, updates)?;
                let h = head.apply(tape, p, *outs.last().expect("cells"))?;
                tape.global_avg_pool(h)
            }
            Arch::Crnn {
                stack,
                head,
                k,
                branch,
                branch_head,
            } => {
                let outs = stack.forward(tape, p, x, mode, updates)?;
                let h = head.apply(tape, p, *outs.last().expect("cells"))?;
                let base = tape.global_avg_pool(h)?;
                let mut s = tape.transpose(outs[k - 1])?;
                for layer in branch {
                    s = layer.sequence(tape, p, s)?;
                }
                let s = tape.transpose(s)?;
                let s = branch_head.apply(tape, p, s)?;
                let side = tape.global_avg_pool(s)?;
                let sum = tape.add(base, side)?;
                Ok(tape.scale(sum, T::from_f64_lossy(0.5)))
            }
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            variant: self.variant,
            input_len: self.input_len,
            params: self.params.cast(),
            arch: self.arch.clone(),
            dropout_rng: self.dropout_rng.clone(),
            stats_ready: self.stats_ready,
            warned_fresh_stats: AtomicBool::new(false),
        }
    }

    /// One line per parameter tensor: name, kind, shape, element count.
    pub fn summary(&self) -> String {
        let mut out = format!("model\t{}\n", self.variant);
        for p in self.params.iter() {
            let kind = if p.trainable() { "trainable" } else { "state" };
            out.push_str(&format!(
                "{}\t{}\t{:?}\t{}\n",
                p.name,
                kind,
                p.tensor.shape(),
                p.tensor.len()
            ));
        }
        out.push_str(&format!(
            "total\t{}\ttrainable\t{}\n",
            self.param_count(),
            self.trainable_param_count()
        ));
        out
    }

    /// Serializes parameters and BN statistics.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    /// Loads a checkpoint written for the same variant.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        checkpoint::decode_into(self, bytes)
    }
}

/// Compact count in the usual K/M notation: `1.14M`, `81.8K`, `950`.
pub fn format_count(n: usize) -> String {
    match n {
        0..=999 => n.to_string(),
        1_000..=999_999 => format!("{:.1}K", n as f64 / 1e3),
        _ => format!("{:.2}M", n as f64 / 1e6),
    }
}

/// Settings for [`gradient_check`].
#[derive(Clone, Copy, Debug)]
pub struct ModelCheck {
    pub input_len: usize,
    pub batch: usize,
    /// Coordinates checked per parameter tensor.
    pub samples: usize,
    pub mode: Mode,
}

impl ModelCheck {
    /// Reduced-size check of the training loss: 1350 samples (the shortest
    /// input that keeps two steps after the pooling cascade) with batch
    /// statistics for CNN-based models, and a 24-sample input (8 recurrent
    /// steps) for the standalone BiGRUs, which are checked in infer mode
    /// because their only train-mode difference is dropout.
    pub fn reduced(variant: Variant) -> Self {
        let (input_len, batch, mode) = if variant.is_standalone_bigru() {
            (24, 4, Mode::Infer)
        } else {
            (1350, 2, Mode::Train)
        };
        ModelCheck {
            input_len,
            batch,
            samples: 3,
            mode,
        }
    }
}

/// Finite-difference check of a whole model's BCE loss with respect to
/// every trainable parameter tensor, in double precision.
///
/// In infer mode the BN running statistics are first set to seeded random
/// values so the fixed normalization is not an identity. Train mode checks
/// the batch-statistics path instead; no dropout is applied in either mode
/// so the loss is a deterministic function of the parameters.
///
/// The perturbed evaluations replay the leaky-ReLU sides and max-pool
/// winners of the unperturbed pass: with thousands of kinks in a network,
/// a step of 1e-3 almost always crosses some of them, and the difference
/// quotient would then mix linear pieces instead of measuring the
/// derivative the backward pass computes.
pub fn gradient_check(variant: Variant, seed: u64, check: &ModelCheck) -> Result<GradCheckReport> {
    use rand::Rng;
    let ModelCheck {
        input_len,
        batch,
        samples,
        mode,
    } = *check;
    let mut model: ModelGraph<f64> = ModelGraph::build_with_input_len(variant, seed, input_len)?;
    let mut rng = rng::stream(seed, "gradcheck/data");
    if mode == Mode::Infer {
        for p in model.params_mut().iter_mut().filter(|p| !p.trainable()) {
            let var = p.name.ends_with("moving_var");
            for v in p.tensor.data_mut() {
                *v = if var {
                    rng.random_range(0.5..1.5)
                } else {
                    rng.random_range(-0.1..0.1)
                };
            }
        }
        model.mark_stats_ready();
    }
    let x: Vec<f64> = (0..batch * input_len)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let x = Tensor::new(vec![batch, 1, input_len], x)?;
    let y: Vec<f64> = (0..batch * NUM_LABELS)
        .map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
        .collect();
    let y = Tensor::new(vec![batch, NUM_LABELS], y)?;

    let loss_of = |model: &ModelGraph<f64>, tape: &mut Tape<f64>| -> Result<Var> {
        let xv = tape.constant(x.clone());
        let logits = model.logits_pure(tape, xv, mode)?;
        tape.bce_with_logits(logits, &y)
    };

    let mut tape = Tape::new();
    tape.record_branches();
    let loss = loss_of(&model, &mut tape)?;
    let grads = tape.backward(loss)?;
    model.params_mut().zero_grads();
    grads.accumulate_into(&tape, model.params_mut());
    let branches = tape.take_branch_log().expect("recording");
    drop(tape);

    let ids: Vec<_> = model
        .params()
        .ids()
        .filter(|id| model.params().get(*id).trainable())
        .collect();
    let mut probes = Vec::with_capacity(ids.len());
    for &id in &ids {
        let p = model.params().get(id);
        let grad = p.grad.clone().ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
        probes.push(Probe {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            analytic: grad,
        });
    }
    let model = std::cell::RefCell::new(model);
    let eval = |pi: usize, i: usize, d: f64| -> Result<f64> {
        let mut m = model.borrow_mut();
        let set = |m: &mut ModelGraph<f64>, v: Option<f64>| -> f64 {
            let slot = &mut m.params_mut().get_mut(ids[pi]).tensor.data_mut()[i];
            let old = *slot;
            if let Some(v) = v {
                *slot = v;
            }
            old
        };
        let orig = set(&mut m, None);
        set(&mut m, Some(orig + d));
        let mut tape = Tape::new();
        tape.replay_branches(branches.clone());
        let out = loss_of(&m, &mut tape).map(|l| tape.value(l).data()[0]);
        set(&mut m, Some(orig));
        out
    };
    gradcheck::compare(&variant.tag(), &probes, Some(samples), seed, eval)
}
