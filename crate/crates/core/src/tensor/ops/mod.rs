//! Differentiable operations. Each op lives in its own submodule as an
//! `impl Tape` block (the forward) plus a record type (the backward).

mod activation;
mod conv;
mod dense;
mod dropout;
mod gru;
mod loss;
mod norm;
mod pool;
mod shape;

use super::tape::{GradSink, Tape, Var};
use super::{Real, Tensor};

pub use activation::LEAKY_SLOPE;
pub use conv::Padding;
pub use loss::{bce_loss, BCE_CLAMP};
pub use norm::{BatchStats, BN_EPS, BN_MOMENTUM};

pub(crate) enum Op<T> {
    Leaf,
    Conv1d(conv::Conv1dRecord),
    MaxPool(pool::MaxPoolRecord),
    BatchNorm(norm::BatchNormRecord<T>),
    LeakyRelu { x: Var },
    Sigmoid { x: Var },
    Dense(dense::DenseRecord),
    Dropout { x: Var, mask: Vec<T> },
    Gru(gru::GruRecord<T>),
    Transpose { x: Var },
    Concat { a: Var, b: Var },
    AddTrunc { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Reshape { x: Var },
    SelectStep { x: Var, step: usize },
    GlobalAvgPool { x: Var },
    BceLogits(loss::BceRecord<T>),
    WeightedSum { x: Var, weights: Vec<T> },
}

impl<T: Real> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d(r) => vec![r.x, r.w, r.b],
            Op::MaxPool(r) => vec![r.x],
            Op::BatchNorm(r) => vec![r.x, r.gamma, r.beta],
            Op::Dense(r) => vec![r.x, r.w, r.b],
            Op::Gru(r) => vec![r.x, r.wx, r.wh, r.bx, r.bh],
            Op::Concat { a, b } | Op::AddTrunc { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::BceLogits(r) => vec![r.logits],
            Op::LeakyRelu { x }
            | Op::Sigmoid { x }
            | Op::Dropout { x, .. }
            | Op::Transpose { x }
            | Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::SelectStep { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::WeightedSum { x, .. } => vec![*x],
        }
    }

    pub(crate) fn backward(&self, tape: &Tape<T>, out: &Tensor<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        match self {
            Op::Leaf => {}
            Op::Conv1d(r) => r.backward(tape, gout, sink),
            Op::MaxPool(r) => r.backward(tape, gout, sink),
            Op::BatchNorm(r) => r.backward(tape, gout, sink),
            Op::LeakyRelu { x } => activation::leaky_relu_backward(tape, *x, gout, sink),
            Op::Sigmoid { x } => activation::sigmoid_backward(*x, out, gout, sink),
            Op::Dense(r) => r.backward(tape, gout, sink),
            Op::Dropout { x, mask } => dropout::backward(*x, mask, gout, sink),
            Op::Gru(r) => r.backward(tape, out, gout, sink),
            Op::Transpose { x } => shape::transpose_backward(tape, *x, gout, sink),
            Op::Concat { a, b } => shape::concat_backward(tape, *a, *b, gout, sink),
            Op::AddTrunc { a, b } => shape::add_trunc_backward(tape, *a, *b, out, gout, sink),
            Op::Add { a, b } => {
                sink.add(*a, gout);
                sink.add(*b, gout);
            }
            Op::Scale { x, factor } => {
                if sink.wants(*x) {
                    let g = sink.buf(*x);
                    for (d, s) in g.iter_mut().zip(gout) {
                        *d = *d + *s * *factor;
                    }
                }
            }
            Op::Reshape { x } => sink.add(*x, gout),
            Op::SelectStep { x, step } => shape::select_step_backward(tape, *x, *step, gout, sink),
            Op::GlobalAvgPool { x } => shape::global_avg_pool_backward(tape, *x, gout, sink),
            Op::BceLogits(r) => r.backward(gout, sink),
            Op::WeightedSum { x, weights } => {
                if sink.wants(*x) {
                    let g = sink.buf(*x);
                    for (d, w) in g.iter_mut().zip(weights) {
                        *d = *d + gout[0] * *w;
                    }
                }
            }
        }
    }
}
