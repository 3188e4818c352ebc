use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

pub(crate) struct MaxPoolRecord {
    pub x: Var,
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

impl<T: Real> Tape<T> {
    /// Non-overlapping max pooling over the last axis of `[batch, channels, len]`.
    ///
    /// The trailing `len % pool` samples are discarded; ties resolve to the
    /// lowest index. `pool > len` yields an empty time axis.
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("maxpool1d expects rank 3, got {xs:?}")));
        }
        if pool == 0 {
            return Err(Error::OutOfContract("pool size must be >= 1".into()));
        }
        let (rows, len) = (xs[0] * xs[1], xs[2]);
        let len_out = len / pool;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len_out);
        let mut argmax = Vec::with_capacity(rows * len_out);
        for r in 0..rows {
            let row = &xv[r * len..(r + 1) * len];
            for i in 0..len_out {
                let mut best = i * pool;
                for j in i * pool + 1..(i + 1) * pool {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        if self.tracks_branches() {
            let fresh = argmax
                .iter()
                .enumerate()
                .map(|(o, &a)| (a - (o / len_out) * len - (o % len_out) * pool) as u32)
                .collect();
            let winners = self.branch_pattern(fresh);
            let xv = self.value(x).data();
            for (o, &w) in winners.iter().enumerate() {
                let idx = (o / len_out) * len + (o % len_out) * pool + w as usize;
                argmax[o] = idx;
                out[o] = xv[idx];
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], len_out], out)?;
        Ok(self.push(value, Op::MaxPool(MaxPoolRecord { x, argmax })))
    }
}

impl MaxPoolRecord {
    pub(super) fn backward<T: Real>(&self, _tape: &Tape<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        if !sink.wants(self.x) {
            return;
        }
        let dx = sink.buf(self.x);
        for (&i, &g) in self.argmax.iter().zip(gout) {
            dx[i] = dx[i] + g;
        }
    }
}
