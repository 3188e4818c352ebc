//! Parameterized layers. Each layer owns [`ParamId`]s into the model's
//! [`ParamStore`] and initializes them from a stream named after the
//! parameter, so a layer's initial weights depend only on the seed and its
//! name.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::rng;
use crate::tensor::{
    BatchStats, Padding, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var, BN_MOMENTUM,
};

fn init_stream(seed: u64, name: &str) -> rng::StreamRng {
    rng::stream(seed, &format!("{}/{name}", rng::INIT))
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<T: Real>(
    seed: u64,
    name: &str,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = init_stream(seed, name);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("sized")
}

/// `[h, blocks*h]` made of `blocks` independent orthogonal `h x h` blocks.
pub(crate) fn orthogonal_blocks<T: Real>(seed: u64, name: &str, h: usize, blocks: usize) -> Tensor<T> {
    let mut rng = init_stream(seed, name);
    let width = blocks * h;
    let mut out = vec![T::zero(); h * width];
    for blk in 0..blocks {
        // modified Gram-Schmidt over the columns of a Gaussian matrix
        let mut cols: Vec<Vec<f64>> = (0..h)
            .map(|_| (0..h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        for j in 0..h {
            for i in 0..j {
                let d: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let qi = cols[i].clone();
                for (a, b) in cols[j].iter_mut().zip(&qi) {
                    *a -= d * b;
                }
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
        for (j, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                out[r * width + blk * h + j] = T::from_f64_lossy(*v);
            }
        }
    }
    Tensor::new(vec![h, width], out).expect("sized")
}

/// Stride-1 `same` convolution.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Self {
        let wname = format!("{name}.weight");
        let w = glorot_uniform(
            seed,
            &wname,
            vec![c_out, c_in, kernel],
            c_in * kernel,
            c_out * kernel,
        );
        Conv {
            w: store.add(wname, w, ParamKind::Trainable),
            b: store.add(
                format!("{name}.bias"),
                Tensor::zeros(vec![c_out]),
                ParamKind::Trainable,
            ),
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d(x, w, b, 1, Padding::Same)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::full(vec![channels], T::one()),
                ParamKind::Trainable,
            ),
            beta: store.add(
                format!("{name}.beta"),
                Tensor::zeros(vec![channels]),
                ParamKind::Trainable,
            ),
            mean: store.add(
                format!("{name}.moving_mean"),
                Tensor::zeros(vec![channels]),
                ParamKind::State,
            ),
            var: store.add(
                format!("{name}.moving_var"),
                Tensor::full(vec![channels], T::one()),
                ParamKind::State,
            ),
        }
    }

    /// Normalizes with batch statistics; the caller folds the returned
    /// statistics into the running averages with [`BatchNorm::update_running`].
    pub fn apply_train<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, BatchStats)> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.batch_norm_train(x, gamma, beta)
    }

    pub fn apply_infer<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let mean = store.tensor(self.mean).to_f64_vec();
        let var = store.tensor(self.var).to_f64_vec();
        tape.batch_norm_fixed(x, gamma, beta, &mean, &var)
    }

    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, stats: &BatchStats) {
        for (id, batch) in [(self.mean, &stats.mean), (self.var, &stats.var)] {
            let run = store.get_mut(id).tensor.data_mut();
            for (r, b) in run.iter_mut().zip(batch) {
                let v = BN_MOMENTUM * r.to_f64().unwrap_or(0.0) + (1.0 - BN_MOMENTUM) * b;
                *r = T::from_f64_lossy(v);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, n_in: usize, n_out: usize) -> Self {
        let wname = format!("{name}.weight");
        let w = glorot_uniform(seed, &wname, vec![n_in, n_out], n_in, n_out);
        Dense {
            w: store.add(wname, w, ParamKind::Trainable),
            b: store.add(
                format!("{name}.bias"),
                Tensor::zeros(vec![n_out]),
                ParamKind::Trainable,
            ),
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.dense(x, w, b)
    }
}

/// One GRU direction.
#[derive(Clone, Debug)]
pub(crate) struct Gru {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
}

impl Gru {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        n_in: usize,
        hidden: usize,
    ) -> Self {
        let kx = format!("{name}.kernel");
        let kh = format!("{name}.recurrent_kernel");
        let wx = glorot_uniform(seed, &kx, vec![n_in, 3 * hidden], n_in, 3 * hidden);
        let wh = orthogonal_blocks(seed, &kh, hidden, 3);
        Gru {
            wx: store.add(kx, wx, ParamKind::Trainable),
            wh: store.add(kh, wh, ParamKind::Trainable),
            bx: store.add(
                format!("{name}.input_bias"),
                Tensor::zeros(vec![3 * hidden]),
                ParamKind::Trainable,
            ),
            bh: store.add(
                format!("{name}.recurrent_bias"),
                Tensor::zeros(vec![3 * hidden]),
                ParamKind::Trainable,
            ),
        }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        reverse: bool,
    ) -> Result<Var> {
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let bx = tape.param(store, self.bx);
        let bh = tape.param(store, self.bh);
        tape.gru(x, wx, wh, bx, bh, reverse)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        n_in: usize,
        hidden: usize,
    ) -> Self {
        BiGru {
            fwd: Gru::new(store, seed, &format!("{name}.forward"), n_in, hidden),
            bwd: Gru::new(store, seed, &format!("{name}.backward"), n_in, hidden),
        }
    }

    /// Both directions over `[b, T, n]`, concatenated to `[b, T, 2h]`.
    pub fn sequence<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let f = self.fwd.apply(tape, store, x, false)?;
        let b = self.bwd.apply(tape, store, x, true)?;
        tape.concat(f, b)
    }

    /// Final state of each direction: forward at `T-1`, backward at `0`.
    pub fn final_state<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let steps = tape.shape(x)[1];
        let f = self.fwd.apply(tape, store, x, false)?;
        let b = self.bwd.apply(tape, store, x, true)?;
        let f_last = tape.select_step(f, steps - 1)?;
        let b_first = tape.select_step(b, 0)?;
        tape.concat(f_last, b_first)
    }
}
