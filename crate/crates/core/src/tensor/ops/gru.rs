//! Fused GRU layer in the reset-after (double bias) formulation:
//!
//! ```text
//! z = σ(x Wz + bxz + h Uz + bhz)
//! r = σ(x Wr + bxr + h Ur + bhr)
//! c = tanh(x Wc + bxc + r ⊙ (h Uc + bhc))
//! h' = (1 - z) ⊙ c + z ⊙ h
//! ```
//!
//! Gate blocks are laid out `[z | r | c]` along the `3h` axis of every
//! weight and bias.

use super::super::gemm::{matmul, Mat};
use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::activation::sigmoid_scalar;
use super::Op;
use crate::error::{Error, Result};

pub(crate) struct GruRecord<T> {
    pub x: Var,
    pub wx: Var,
    pub wh: Var,
    pub bx: Var,
    pub bh: Var,
    reverse: bool,
    dims: Dims,
    /// Per processing step and batch row: `[z | r | c | h Uc + bhc]`.
    cache: Vec<T>,
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
}

impl Dims {
    fn time(&self, step: usize, reverse: bool) -> usize {
        if reverse {
            self.steps - 1 - step
        } else {
            step
        }
    }

    /// View of the `[batch, hidden]` slice at time `t` of a `[batch, steps, hidden]` buffer.
    fn at_time<'a, T>(&self, buf: &'a [T], t: usize) -> Mat<'a, T> {
        Mat {
            data: &buf[t * self.hidden..],
            rows: self.batch,
            cols: self.hidden,
            rs: self.steps * self.hidden,
            cs: 1,
        }
    }
}

/// Batches up to this size use row loops for the per-step recurrent
/// products; the GEMM packing overhead dominates for so few rows.
const SMALL_BATCH: usize = 8;
/// Rows gathered before one recurrent-weight gradient product.
const CHUNK_ROWS: usize = 2048;

/// `out[b, :] += v[b, :] · w` for row-major `w: [k, n]`.
fn rows_times<T: Real>(v: &[T], w: &[T], n: usize, out: &mut [T]) {
    let k = w.len() / n;
    for (vr, or) in v.chunks(k).zip(out.chunks_mut(n)) {
        for (&a, wr) in vr.iter().zip(w.chunks(n)) {
            if a != T::zero() {
                for (o, &x) in or.iter_mut().zip(wr) {
                    *o = *o + a * x;
                }
            }
        }
    }
}

/// `out[b, :] += g[b, :] · wᵀ` for row-major `w: [k, n]`.
fn rows_times_t<T: Real>(g: &[T], w: &[T], n: usize, out: &mut [T]) {
    let k = w.len() / n;
    for (gr, or) in g.chunks(n).zip(out.chunks_mut(k)) {
        for (o, wr) in or.iter_mut().zip(w.chunks(n)) {
            *o = *o + dot(gr, wr);
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

impl<T: Real> Tape<T> {
    /// Runs a GRU over `x: [batch, steps, input]`, returning every hidden
    /// state `[batch, steps, hidden]` with `h_0 = 0`. With `reverse` the
    /// sequence is consumed back to front and the outputs are re-reversed, so
    /// index `t` always holds the state after seeing input `t`.
    ///
    /// Weights: `wx: [input, 3h]`, `wh: [h, 3h]`, `bx, bh: [3h]`.
    pub fn gru(&mut self, x: Var, wx: Var, wh: Var, bx: Var, bh: Var, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (wxs, whs) = (self.shape(wx).to_vec(), self.shape(wh).to_vec());
        if xs.len() != 3 || wxs.len() != 2 || whs.len() != 2 {
            return Err(Error::shape(format!(
                "gru expects x [b,T,n], wx [n,3h], wh [h,3h]; got {xs:?}, {wxs:?}, {whs:?}"
            )));
        }
        let hidden = whs[0];
        let ok = wxs[0] == xs[2]
            && wxs[1] == 3 * hidden
            && whs[1] == 3 * hidden
            && self.shape(bx) == [3 * hidden]
            && self.shape(bh) == [3 * hidden];
        if !ok {
            return Err(Error::shape(format!(
                "gru weights do not match: x {xs:?}, wx {wxs:?}, wh {whs:?}, bx {:?}, bh {:?}",
                self.shape(bx),
                self.shape(bh)
            )));
        }
        if xs[1] == 0 {
            return Err(Error::OutOfContract("gru needs at least one time step".into()));
        }
        let d = Dims {
            batch: xs[0],
            steps: xs[1],
            input: xs[2],
            hidden,
        };
        let h = hidden;
        let h3 = 3 * h;

        // Input projections for all steps at once: [batch*steps, 3h].
        let bxv = self.value(bx).data();
        let mut xp: Vec<T> = (0..d.batch * d.steps).flat_map(|_| bxv.iter().copied()).collect();
        matmul(
            Mat::row_major(self.value(x).data(), d.batch * d.steps, d.input),
            Mat::row_major(self.value(wx).data(), d.input, h3),
            &mut xp,
            true,
        );

        let whv = self.value(wh).data();
        let bhv = self.value(bh).data();
        let mut out = vec![T::zero(); d.batch * d.steps * h];
        let mut cache = vec![T::zero(); d.steps * d.batch * 4 * h];
        let mut hp = vec![T::zero(); d.batch * h3];
        let mut h_prev = vec![T::zero(); d.batch * h];
        for step in 0..d.steps {
            let t = d.time(step, reverse);
            for row in hp.chunks_mut(h3) {
                row.copy_from_slice(bhv);
            }
            if step > 0 {
                if d.batch <= SMALL_BATCH {
                    rows_times(&h_prev, whv, h3, &mut hp);
                } else {
                    matmul(
                        Mat::row_major(&h_prev, d.batch, h),
                        Mat::row_major(whv, h, h3),
                        &mut hp,
                        true,
                    );
                }
            }
            for b in 0..d.batch {
                let xr = &xp[(b * d.steps + t) * h3..(b * d.steps + t + 1) * h3];
                let hr = &hp[b * h3..(b + 1) * h3];
                let cr = &mut cache[(step * d.batch + b) * 4 * h..(step * d.batch + b + 1) * 4 * h];
                let hprev_row = &mut h_prev[b * h..(b + 1) * h];
                let orow = &mut out[(b * d.steps + t) * h..(b * d.steps + t + 1) * h];
                for j in 0..h {
                    let z = sigmoid_scalar(xr[j] + hr[j]);
                    let r = sigmoid_scalar(xr[h + j] + hr[h + j]);
                    let c = (xr[2 * h + j] + r * hr[2 * h + j]).tanh();
                    let hn = (T::one() - z) * c + z * hprev_row[j];
                    cr[j] = z;
                    cr[h + j] = r;
                    cr[2 * h + j] = c;
                    cr[3 * h + j] = hr[2 * h + j];
                    orow[j] = hn;
                    hprev_row[j] = hn;
                }
            }
        }
        let value = Tensor::new(vec![d.batch, d.steps, h], out)?;
        Ok(self.push(
            value,
            Op::Gru(GruRecord {
                x,
                wx,
                wh,
                bx,
                bh,
                reverse,
                dims: d,
                cache,
            }),
        ))
    }
}

impl<T: Real> GruRecord<T> {
    pub(super) fn backward(&self, tape: &Tape<T>, out: &Tensor<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        let d = self.dims;
        let h = d.hidden;
        let h3 = 3 * h;
        let y = out.data();
        let whv = tape.value(self.wh).data();
        let wh_t = Mat::row_major(whv, h, h3).t();

        let mut dxp = vec![T::zero(); d.batch * d.steps * h3];
        let mut dwh = vec![T::zero(); h * h3];
        let mut dbh = vec![T::zero(); h3];
        let mut dh = vec![T::zero(); d.batch * h];
        let mut dhp = vec![T::zero(); d.batch * h3];
        let one = T::one();
        let mut gather_h: Vec<T> = Vec::with_capacity(CHUNK_ROWS * h);
        let mut gather_d: Vec<T> = Vec::with_capacity(CHUNK_ROWS * h3);
        let flush = |gh: &mut Vec<T>, gd: &mut Vec<T>, dwh: &mut [T]| {
            let rows = gd.len() / h3;
            if rows > 0 {
                matmul(
                    Mat::row_major(gh, rows, h).t(),
                    Mat::row_major(gd, rows, h3),
                    dwh,
                    true,
                );
            }
            gh.clear();
            gd.clear();
        };

        for step in (0..d.steps).rev() {
            let t = d.time(step, self.reverse);
            let t_prev = (step > 0).then(|| d.time(step - 1, self.reverse));
            for b in 0..d.batch {
                let cr = &self.cache[(step * d.batch + b) * 4 * h..(step * d.batch + b + 1) * 4 * h];
                let gy = &gout[(b * d.steps + t) * h..(b * d.steps + t + 1) * h];
                let dxr = &mut dxp[(b * d.steps + t) * h3..(b * d.steps + t + 1) * h3];
                let dhr = &mut dhp[b * h3..(b + 1) * h3];
                let dh_row = &mut dh[b * h..(b + 1) * h];
                for j in 0..h {
                    let (z, r, c, hpc) = (cr[j], cr[h + j], cr[2 * h + j], cr[3 * h + j]);
                    let hprev = match t_prev {
                        Some(tp) => y[(b * d.steps + tp) * h + j],
                        None => T::zero(),
                    };
                    let dht = gy[j] + dh_row[j];
                    let dz = dht * (hprev - c);
                    let dc = dht * (one - z);
                    let dac = dc * (one - c * c);
                    let daz = dz * z * (one - z);
                    let dar = dac * hpc * r * (one - r);
                    dxr[j] = daz;
                    dxr[h + j] = dar;
                    dxr[2 * h + j] = dac;
                    dhr[j] = daz;
                    dhr[h + j] = dar;
                    dhr[2 * h + j] = dac * r;
                    dh_row[j] = dht * z;
                }
            }
            for row in dhp.chunks(h3) {
                for (acc, v) in dbh.iter_mut().zip(row) {
                    *acc = *acc + *v;
                }
            }
            if let Some(tp) = t_prev {
                if d.batch <= SMALL_BATCH {
                    rows_times_t(&dhp, whv, h3, &mut dh);
                } else {
                    matmul(Mat::row_major(&dhp, d.batch, h3), wh_t, &mut dh, true);
                }
                // Gathered for one large product per chunk instead of a
                // rank-`batch` update per step.
                let hprev = d.at_time(y, tp);
                for b in 0..d.batch {
                    let src = &hprev.data[b * hprev.rs..b * hprev.rs + h];
                    gather_h.extend_from_slice(src);
                }
                gather_d.extend_from_slice(&dhp);
                if gather_d.len() >= CHUNK_ROWS * h3 {
                    flush(&mut gather_h, &mut gather_d, &mut dwh);
                }
            }
        }
        flush(&mut gather_h, &mut gather_d, &mut dwh);

        sink.add(self.wh, &dwh);
        sink.add(self.bh, &dbh);
        if sink.wants(self.bx) {
            let dbx = sink.buf(self.bx);
            for row in dxp.chunks(h3) {
                for (acc, v) in dbx.iter_mut().zip(row) {
                    *acc = *acc + *v;
                }
            }
        }
        let rows = d.batch * d.steps;
        let dxp_m = Mat::row_major(&dxp[..], rows, h3);
        if sink.wants(self.wx) {
            let xm = Mat::row_major(tape.value(self.x).data(), rows, d.input);
            matmul(xm.t(), dxp_m, sink.buf(self.wx), true);
        }
        if sink.wants(self.x) {
            let wxm = Mat::row_major(tape.value(self.wx).data(), d.input, h3);
            matmul(dxp_m, wxm.t(), sink.buf(self.x), true);
        }
    }
}
