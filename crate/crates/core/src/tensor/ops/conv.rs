use super::super::gemm::{matmul, Mat};
use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `length_out = ceil(length / stride)`.
    Same,
    /// No padding; `length_out = floor((length - kernel) / stride) + 1`.
    Valid,
}

pub(crate) struct Conv1dRecord {
    pub x: Var,
    pub w: Var,
    pub b: Var,
    geom: Geometry,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    len_out: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad_left == 0 && self.len_out == self.len
    }

    /// Unfolds one batch item into a `(c_in * kernel) x len_out` matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (k, lo, l) = (self.kernel, self.len_out, self.len);
        for ci in 0..self.c_in {
            let src = &x[ci * l..(ci + 1) * l];
            for kk in 0..k {
                let row = &mut cols[(ci * k + kk) * lo..(ci * k + kk + 1) * lo];
                if self.stride == 1 {
                    // valid t: 0 <= t + kk - pad_left < l
                    let t0 = self.pad_left.saturating_sub(kk).min(lo);
                    let t1 = (l + self.pad_left).saturating_sub(kk).min(lo).max(t0);
                    row[..t0].iter_mut().for_each(|v| *v = T::zero());
                    if t1 > t0 {
                        let s0 = t0 + kk - self.pad_left;
                        row[t0..t1].copy_from_slice(&src[s0..s0 + (t1 - t0)]);
                    }
                    row[t1..].iter_mut().for_each(|v| *v = T::zero());
                } else {
                    for (t, v) in row.iter_mut().enumerate() {
                        let pos = (t * self.stride + kk) as isize - self.pad_left as isize;
                        *v = if pos >= 0 && (pos as usize) < l {
                            src[pos as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (k, lo, l) = (self.kernel, self.len_out, self.len);
        for ci in 0..self.c_in {
            let dst = &mut dx[ci * l..(ci + 1) * l];
            for kk in 0..k {
                let row = &cols[(ci * k + kk) * lo..(ci * k + kk + 1) * lo];
                for (t, g) in row.iter().enumerate() {
                    let pos = (t * self.stride + kk) as isize - self.pad_left as isize;
                    if pos >= 0 && (pos as usize) < l {
                        dst[pos as usize] = dst[pos as usize] + *g;
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// 1-D cross-correlation plus bias.
    ///
    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`, `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape(format!(
                "conv1d expects rank-3 input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if ws[1] != xs[1] {
            return Err(Error::shape(format!(
                "conv1d channel mismatch: input {xs:?} vs weight {ws:?}"
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(format!(
                "conv1d bias {bs:?} does not match weight {ws:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::OutOfContract("conv1d stride must be >= 1".into()));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        if kernel == 0 {
            return Err(Error::shape("conv1d kernel must be >= 1"));
        }
        let (pad_left, len_out) = match padding {
            Padding::Same => {
                let len_out = len.div_ceil(stride);
                let total = ((len_out.max(1) - 1) * stride + kernel).saturating_sub(len);
                (total / 2, len_out)
            }
            Padding::Valid => {
                if kernel > len {
                    return Err(Error::shape(format!(
                        "conv1d kernel {kernel} exceeds input length {len} (input {xs:?})"
                    )));
                }
                (0, (len - kernel) / stride + 1)
            }
        };
        let geom = Geometry {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            stride,
            pad_left,
            len_out,
        };

        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * c_out * len_out];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); geom.rows() * len_out]
        };
        let wmat = Mat::row_major(wv, c_out, geom.rows());
        for bi in 0..batch {
            let xb = &xv[bi * c_in * len..(bi + 1) * c_in * len];
            let ob = &mut out[bi * c_out * len_out..(bi + 1) * c_out * len_out];
            for (co, row) in ob.chunks_mut(len_out.max(1)).enumerate().take(c_out) {
                row.iter_mut().for_each(|v| *v = bv[co]);
            }
            let colm = if geom.is_pointwise() {
                Mat::row_major(xb, geom.rows(), len_out)
            } else {
                geom.im2col(xb, &mut cols);
                Mat::row_major(&cols[..], geom.rows(), len_out)
            };
            matmul(wmat, colm, ob, true);
        }
        let value = Tensor::new(vec![batch, c_out, len_out], out)?;
        Ok(self.push(value, Op::Conv1d(Conv1dRecord { x, w, b, geom })))
    }
}

impl Conv1dRecord {
    pub(super) fn backward<T: Real>(&self, tape: &Tape<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        let g = self.geom;
        let per_out = g.c_out * g.len_out;
        if sink.wants(self.b) {
            let db = sink.buf(self.b);
            for bi in 0..g.batch {
                for co in 0..g.c_out {
                    let row = &gout[bi * per_out + co * g.len_out..bi * per_out + (co + 1) * g.len_out];
                    db[co] = db[co] + row.iter().copied().sum::<T>();
                }
            }
        }
        let xv = tape.value(self.x).data();
        let wv = tape.value(self.w).data();
        let want_w = sink.wants(self.w);
        let want_x = sink.wants(self.x);
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { g.rows() * g.len_out }];
        if want_w {
            let mut dw = vec![T::zero(); g.c_out * g.rows()];
            for bi in 0..g.batch {
                let xb = &xv[bi * g.c_in * g.len..(bi + 1) * g.c_in * g.len];
                let gb = &gout[bi * per_out..(bi + 1) * per_out];
                let colm = if g.is_pointwise() {
                    Mat::row_major(xb, g.rows(), g.len_out)
                } else {
                    g.im2col(xb, &mut cols);
                    Mat::row_major(&cols[..], g.rows(), g.len_out)
                };
                matmul(Mat::row_major(gb, g.c_out, g.len_out), colm.t(), &mut dw, true);
            }
            sink.add(self.w, &dw);
        }
        if want_x {
            let wt = Mat::row_major(wv, g.c_out, g.rows()).t();
            let mut dcols = vec![T::zero(); g.rows() * g.len_out];
            let dx = sink.buf(self.x);
            for bi in 0..g.batch {
                let gb = &gout[bi * per_out..(bi + 1) * per_out];
                let dxb = &mut dx[bi * g.c_in * g.len..(bi + 1) * g.c_in * g.len];
                if g.is_pointwise() {
                    matmul(wt, Mat::row_major(gb, g.c_out, g.len_out), dxb, true);
                } else {
                    matmul(wt, Mat::row_major(gb, g.c_out, g.len_out), &mut dcols, false);
                    g.col2im_add(&dcols, dxb);
                }
            }
        }
    }
}
