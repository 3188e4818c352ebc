use rand::Rng;

use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    /// Inverted dropout. Outside training (or at `rate == 0`) this is the
    /// identity and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::OutOfContract(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }))
    }
}

pub(super) fn backward<T: Real>(x: Var, mask: &[T], gout: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let dx = sink.buf(x);
    for ((d, &g), &m) in dx.iter_mut().zip(gout).zip(mask) {
        *d = *d + g * m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn inference_and_zero_rate_are_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(vec![4], 2.0));
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn survivor_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut tape = Tape::<f64>::new();
        let input: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mean_in = input.iter().sum::<f64>() / n as f64;
        let x = tape.constant(Tensor::new(vec![n], input).unwrap());
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let out = tape.value(y).data();
        let survivors = out.iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        let mean_out = out.iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        assert!(((mean_out - mean_in) / mean_in).abs() < 0.02);
    }
}
