use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

/// Added to the variance inside the square root.
pub const BN_EPS: f64 = 1e-5;
/// Running statistics keep this fraction of their previous value per step.
pub const BN_MOMENTUM: f64 = 0.99;

pub(crate) struct BatchNormRecord<T> {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    /// Statistics came from the batch itself (train mode).
    batch_stats: bool,
    dims: (usize, usize, usize),
}

/// Per-channel statistics of a train-mode batch norm call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn dims3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [b, c, l] => Ok((*b, *c, *l)),
        _ => Err(Error::shape(format!("{what} expects rank 3, got {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    /// Batch normalization with batch statistics over `(batch, len)` per channel.
    /// Returns the output and the (biased) batch statistics used.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (b, c, l) = dims3(self.shape(x), "batch_norm")?;
        self.check_affine(c, gamma, beta)?;
        let n = b * l;
        if n < 2 {
            return Err(Error::OutOfContract(format!(
                "train-mode batch norm needs batch*len >= 2, got {n}"
            )));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                let row = &xv[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                s += row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let m = s / n as f64;
            let mut ss = 0.0;
            for bi in 0..b {
                let row = &xv[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                ss += row
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap() - m;
                        d * d
                    })
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = ss / n as f64;
        }
        let v = self.normalize(x, gamma, beta, &mean, &var, true, (b, c, l))?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let (b, c, l) = dims3(self.shape(x), "batch_norm")?;
        self.check_affine(c, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(format!(
                "batch_norm statistics have {} / {} entries for {c} channels",
                mean.len(),
                var.len()
            )));
        }
        self.normalize(x, gamma, beta, mean, var, false, (b, c, l))
    }

    fn check_affine(&self, c: usize, gamma: Var, beta: Var) -> Result<()> {
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch_norm scale/shift {:?} / {:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        batch_stats: bool,
        (b, c, l): (usize, usize, usize),
    ) -> Result<Var> {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let m = T::from_f64_lossy(mean[ch]);
                let s = T::from_f64_lossy(inv_std[ch]);
                let range = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                for i in range {
                    let h = (xv[i] - m) * s;
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let value = Tensor::new(vec![b, c, l], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm(BatchNormRecord {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
                dims: (b, c, l),
            }),
        ))
    }
}

impl<T: Real> BatchNormRecord<T> {
    pub(super) fn backward(&self, tape: &Tape<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        let (b, c, l) = self.dims;
        let n = (b * l) as f64;
        let gamma = tape.value(self.gamma).data().to_vec();
        // Per-channel sums of dy and dy * xhat, accumulated in f64.
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for bi in 0..b {
            for ch in 0..c {
                let range = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                for i in range {
                    let g = gout[i].to_f64().unwrap();
                    sum_g[ch] += g;
                    sum_gx[ch] += g * self.xhat[i].to_f64().unwrap();
                }
            }
        }
        if sink.wants(self.gamma) {
            let d: Vec<T> = sum_gx.iter().map(|&v| T::from_f64_lossy(v)).collect();
            sink.add(self.gamma, &d);
        }
        if sink.wants(self.beta) {
            let d: Vec<T> = sum_g.iter().map(|&v| T::from_f64_lossy(v)).collect();
            sink.add(self.beta, &d);
        }
        if !sink.wants(self.x) {
            return;
        }
        let dx = sink.buf(self.x);
        for bi in 0..b {
            for ch in 0..c {
                let gm = gamma[ch].to_f64().unwrap();
                let s = self.inv_std[ch];
                let range = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                if self.batch_stats {
                    // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                    let k = gm * s / n;
                    for i in range {
                        let g = gout[i].to_f64().unwrap();
                        let h = self.xhat[i].to_f64().unwrap();
                        let v = k * (n * g - sum_g[ch] - h * sum_gx[ch]);
                        dx[i] = dx[i] + T::from_f64_lossy(v);
                    }
                } else {
                    let k = T::from_f64_lossy(gm * s);
                    for i in range {
                        dx[i] = dx[i] + gout[i] * k;
                    }
                }
            }
        }
    }
}
