//! Shape plumbing, pooling reductions and elementwise combinations.

use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

fn rank3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::shape(format!("{what} expects rank 3, got {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    /// Swaps the last two axes: `[b, m, n] -> [b, n, m]`.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (b, m, n) = rank3(self.shape(x), "transpose")?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            let src = &xv[bi * m * n..(bi + 1) * m * n];
            let dst = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let value = Tensor::new(vec![b, n, m], out)?;
        Ok(self.push(value, Op::Transpose { x }))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(format!("cannot concatenate {sa:?} and {sb:?}")));
        }
        let (fa, fb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (fa + fb));
        for r in 0..rows {
            out.extend_from_slice(&av[r * fa..(r + 1) * fa]);
            out.extend_from_slice(&bv[r * fb..(r + 1) * fb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = fa + fb;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    /// Sum of two `[b, c, len]` maps truncated to the shorter length.
    pub fn add_truncate(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, la) = rank3(self.shape(a), "add_truncate")?;
        let (bb, cb, lb) = rank3(self.shape(b), "add_truncate")?;
        if ba != bb || ca != cb {
            return Err(Error::shape(format!(
                "add_truncate operands {:?} and {:?} differ beyond length",
                self.shape(a),
                self.shape(b)
            )));
        }
        let l = la.min(lb);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * ca * l);
        for r in 0..ba * ca {
            out.extend(
                av[r * la..r * la + l]
                    .iter()
                    .zip(&bv[r * lb..r * lb + l])
                    .map(|(x, y)| *x + *y),
            );
        }
        let value = Tensor::new(vec![ba, ca, l], out)?;
        Ok(self.push(value, Op::AddTrunc { a, b }))
    }

    /// Elementwise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add operands {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| *v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x, factor })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// `[b, c, len] -> [b, c * len]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rest = s[1..].iter().product();
        self.reshape(x, vec![s[0], rest])
    }

    /// Picks time step `step` of `[b, steps, features]`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let (b, t, f) = rank3(self.shape(x), "select_step")?;
        if step >= t {
            return Err(Error::shape(format!("step {step} out of range for {t} steps")));
        }
        let xv = self.value(x).data();
        let out = (0..b)
            .flat_map(|bi| xv[(bi * t + step) * f..(bi * t + step + 1) * f].iter().copied())
            .collect();
        let value = Tensor::new(vec![b, f], out)?;
        Ok(self.push(value, Op::SelectStep { x, step }))
    }

    /// Mean over the time axis: `[b, c, len] -> [b, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, l) = rank3(self.shape(x), "global_avg_pool")?;
        if l == 0 {
            return Err(Error::shape("global_avg_pool over an empty time axis"));
        }
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(l).unwrap();
        let out = xv
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }))
    }
}

pub(super) fn transpose_backward<T: Real>(tape: &Tape<T>, x: Var, gout: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let s = tape.shape(x);
    let (b, m, n) = (s[0], s[1], s[2]);
    let dx = sink.buf(x);
    for bi in 0..b {
        let off = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                dx[off + i * n + j] = dx[off + i * n + j] + gout[off + j * m + i];
            }
        }
    }
}

pub(super) fn concat_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    gout: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let fa = *tape.shape(a).last().unwrap();
    let fb = *tape.shape(b).last().unwrap();
    let rows = tape.value(a).len() / fa.max(1);
    for (v, off, f) in [(a, 0, fa), (b, fa, fb)] {
        if !sink.wants(v) {
            continue;
        }
        let dv = sink.buf(v);
        for r in 0..rows {
            let src = &gout[r * (fa + fb) + off..r * (fa + fb) + off + f];
            for (d, s) in dv[r * f..(r + 1) * f].iter_mut().zip(src) {
                *d = *d + *s;
            }
        }
    }
}

pub(super) fn add_trunc_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    out: &Tensor<T>,
    gout: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let l = out.shape()[2];
    let rows = out.shape()[0] * out.shape()[1];
    for v in [a, b] {
        if !sink.wants(v) {
            continue;
        }
        let lv = tape.shape(v)[2];
        let dv = sink.buf(v);
        for r in 0..rows {
            for (d, s) in dv[r * lv..r * lv + l].iter_mut().zip(&gout[r * l..(r + 1) * l]) {
                *d = *d + *s;
            }
        }
    }
}

pub(super) fn select_step_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    step: usize,
    gout: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let s = tape.shape(x);
    let (b, t, f) = (s[0], s[1], s[2]);
    let dx = sink.buf(x);
    for bi in 0..b {
        let dst = &mut dx[(bi * t + step) * f..(bi * t + step + 1) * f];
        for (d, g) in dst.iter_mut().zip(&gout[bi * f..(bi + 1) * f]) {
            *d = *d + *g;
        }
    }
}

pub(super) fn global_avg_pool_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    gout: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let l = tape.shape(x)[2];
    let inv = T::one() / T::from_usize(l).unwrap();
    let dx = sink.buf(x);
    for (row, g) in dx.chunks_mut(l).zip(gout) {
        for d in row {
            *d = *d + *g * inv;
        }
    }
}
