use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

pub(crate) struct BceRecord<T> {
    pub logits: Var,
    /// d loss / d logit, already divided by the element count.
    dlogits: Vec<T>,
}

/// Largest logit magnitude that survives the probability clamp.
fn logit_limit() -> f64 {
    ((1.0 - BCE_CLAMP) / BCE_CLAMP).ln()
}

/// Mean binary cross-entropy of probabilities `p` against binary targets `y`.
pub fn bce_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if p.shape() != y.shape() {
        return Err(Error::shape(format!(
            "bce: predictions {:?} vs targets {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let n = p.len().max(1) as f64;
    let total: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, y)| {
            let p = p.to_f64().unwrap().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.to_f64().unwrap();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

impl<T: Real> Tape<T> {
    /// Mean binary cross-entropy evaluated directly on logits:
    /// `max(z, 0) - z*y + ln(1 + e^-|z|)` with `z` clamped to the logit range
    /// of the probability clamp.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(Error::shape(format!(
                "bce: logits {:?} vs targets {:?}",
                self.shape(logits),
                targets.shape()
            )));
        }
        let limit = logit_limit();
        let zs = self.value(logits).data();
        let n = zs.len().max(1) as f64;
        let mut total = 0.0f64;
        let mut dlogits = Vec::with_capacity(zs.len());
        for (z, y) in zs.iter().zip(targets.data()) {
            let raw = z.to_f64().unwrap();
            let y = y.to_f64().unwrap();
            let z = raw.clamp(-limit, limit);
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            let p = 1.0 / (1.0 + (-z).exp());
            let g = if raw.abs() < limit { (p - y) / n } else { 0.0 };
            dlogits.push(T::from_f64_lossy(g));
        }
        let value = Tensor::scalar(T::from_f64_lossy(total / n));
        Ok(self.push(value, Op::BceLogits(BceRecord { logits, dlogits })))
    }

    /// `sum(x * weights)`; turns any tensor into a scalar for checking.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != weights.len() {
            return Err(Error::shape(format!(
                "weighted_sum: {} values, {} weights",
                xv.len(),
                weights.len()
            )));
        }
        let s = xv.iter().zip(weights).map(|(a, b)| *a * *b).sum::<T>();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }
}

impl<T: Real> BceRecord<T> {
    pub(super) fn backward(&self, gout: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.logits) {
            return;
        }
        let dx = sink.buf(self.logits);
        for (d, g) in dx.iter_mut().zip(&self.dlogits) {
            *d = *d + gout[0] * *g;
        }
    }
}
