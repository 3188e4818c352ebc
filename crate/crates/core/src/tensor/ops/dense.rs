use super::super::gemm::{matmul, Mat};
use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

pub(crate) struct DenseRecord {
    pub x: Var,
    pub w: Var,
    pub b: Var,
}

impl<T: Real> Tape<T> {
    /// Affine map `x * w + b` for `x: [batch, n]`, `w: [n, m]`, `b: [m]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let ok = xs.len() == 2 && ws.len() == 2 && xs[1] == ws[0] && bs == [ws[1]];
        if !ok {
            return Err(Error::shape(format!(
                "dense: input {xs:?}, weight {ws:?}, bias {bs:?} do not compose"
            )));
        }
        let (batch, n, m) = (xs[0], xs[1], ws[1]);
        let bv = self.value(b).data();
        let mut out: Vec<T> = (0..batch).flat_map(|_| bv.iter().copied()).collect();
        matmul(
            Mat::row_major(self.value(x).data(), batch, n),
            Mat::row_major(self.value(w).data(), n, m),
            &mut out,
            true,
        );
        let value = Tensor::new(vec![batch, m], out)?;
        Ok(self.push(value, Op::Dense(DenseRecord { x, w, b })))
    }
}

impl DenseRecord {
    pub(super) fn backward<T: Real>(&self, tape: &Tape<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        let xs = tape.shape(self.x);
        let (batch, n) = (xs[0], xs[1]);
        let m = tape.shape(self.w)[1];
        let g = Mat::row_major(gout, batch, m);
        if sink.wants(self.b) {
            let db = sink.buf(self.b);
            for row in gout.chunks(m) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d = *d + *v;
                }
            }
        }
        if sink.wants(self.w) {
            let xm = Mat::row_major(tape.value(self.x).data(), batch, n);
            matmul(xm.t(), g, sink.buf(self.w), true);
        }
        if sink.wants(self.x) {
            let wm = Mat::row_major(tape.value(self.w).data(), n, m);
            matmul(g, wm.t(), sink.buf(self.x), true);
        }
    }
}
