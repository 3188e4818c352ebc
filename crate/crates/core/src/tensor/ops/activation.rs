use super::super::tape::{GradSink, Tape, Var};
use super::super::{Real, Tensor};
use super::Op;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.3;

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let data = if self.tracks_branches() {
            let fresh = self
                .value(x)
                .data()
                .iter()
                .map(|&v| u32::from(v > T::zero()))
                .collect();
            let side = self.branch_pattern(fresh);
            self.value(x)
                .data()
                .iter()
                .zip(&side)
                .map(|(&v, &pos)| if pos == 1 { v } else { slope * v })
                .collect()
        } else {
            self.value(x)
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { slope * v })
                .collect()
        };
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid { x })
    }
}

pub(super) fn leaky_relu_backward<T: Real>(tape: &Tape<T>, x: Var, gout: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    let xv = tape.value(x).data();
    let dx = sink.buf(x);
    for ((d, &g), &v) in dx.iter_mut().zip(gout).zip(xv) {
        *d = *d + if v > T::zero() { g } else { slope * g };
    }
}

pub(super) fn sigmoid_backward<T: Real>(x: Var, out: &Tensor<T>, gout: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let dx = sink.buf(x);
    for ((d, &g), &y) in dx.iter_mut().zip(gout).zip(out.data()) {
        *d = *d + g * y * (T::one() - y);
    }
}
