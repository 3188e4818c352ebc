//! The finite-difference suite over every differentiable tape op, on
//! small random shapes.

use rand::Rng;

use super::gradcheck::{check_fn, GradCheckReport};
use super::{Padding, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

fn rand_tensor(r: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("sized")
}

/// Reduces any tensor to a scalar with fixed random weights, so gradients
/// differ per coordinate.
fn reduce(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = tape.value(y).len();
    let mut r = rng::stream(seed, "gradcheck/reduce");
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    tape.weighted_sum(y, &w)
}

/// Finite-difference checks of every differentiable op on random small
/// shapes drawn from `seed`.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::stream(seed, "gradcheck/op-shapes");
    let mut reports = Vec::new();
    let b = r.random_range(1..=3);
    let c = r.random_range(1..=3);
    let l = r.random_range(6..=12);
    let x = rand_tensor(&mut r, vec![b, c, l], -1.0, 1.0);

    // convolution, both paddings and strides 1-2
    let co = r.random_range(1..=3);
    let k = r.random_range(1..=4);
    let w = rand_tensor(&mut r, vec![co, c, k], -1.0, 1.0);
    let bias = rand_tensor(&mut r, vec![co], -0.5, 0.5);
    for (pad, stride) in [(Padding::Same, 1), (Padding::Valid, 1), (Padding::Same, 2)] {
        let name = format!("conv1d/{pad:?}/s{stride}");
        reports.push(check_fn(
            &name,
            &[("x", x.clone()), ("w", w.clone()), ("b", bias.clone())],
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], stride, pad)?;
                reduce(t, y, seed)
            },
        )?);
    }

    let pool = r.random_range(1..=4);
    reports.push(check_fn("maxpool1d", &[("x", x.clone())], |t, v| {
        let y = t.maxpool1d(v[0], pool)?;
        reduce(t, y, seed)
    })?);

    let gamma = rand_tensor(&mut r, vec![c], 0.5, 1.5);
    let beta = rand_tensor(&mut r, vec![c], -0.5, 0.5);
    reports.push(check_fn(
        "batchnorm/train",
        &[("x", x.clone()), ("gamma", gamma.clone()), ("beta", beta.clone())],
        |t, v| {
            let (y, _) = t.batch_norm_train(v[0], v[1], v[2])?;
            reduce(t, y, seed)
        },
    )?);
    let mean: Vec<f64> = (0..c).map(|_| r.random_range(-0.3..0.3)).collect();
    let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
    reports.push(check_fn(
        "batchnorm/infer",
        &[("x", x.clone()), ("gamma", gamma), ("beta", beta)],
        |t, v| {
            let y = t.batch_norm_fixed(v[0], v[1], v[2], &mean, &var)?;
            reduce(t, y, seed)
        },
    )?);

    reports.push(check_fn("leaky_relu", &[("x", x.clone())], |t, v| {
        let y = t.leaky_relu(v[0]);
        reduce(t, y, seed)
    })?);
    let wide = rand_tensor(&mut r, vec![b, c, l], -6.0, 6.0);
    reports.push(check_fn("sigmoid", &[("x", wide)], |t, v| {
        let y = t.sigmoid(v[0]);
        reduce(t, y, seed)
    })?);

    let (n, m) = (r.random_range(1..=5), r.random_range(1..=5));
    let xd = rand_tensor(&mut r, vec![b, n], -1.0, 1.0);
    let wd = rand_tensor(&mut r, vec![n, m], -1.0, 1.0);
    let bd = rand_tensor(&mut r, vec![m], -1.0, 1.0);
    reports.push(check_fn(
        "dense",
        &[("x", xd.clone()), ("w", wd), ("b", bd)],
        |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            reduce(t, y, seed)
        },
    )?);
    reports.push(check_fn("dropout/train", &[("x", xd.clone())], |t, v| {
        let mut mask_rng = rng::stream(seed, "gradcheck/dropout");
        let y = t.dropout(v[0], 0.5, true, &mut mask_rng)?;
        reduce(t, y, seed)
    })?);

    let (steps, feat, h) = (
        r.random_range(1..=5),
        r.random_range(1..=3),
        r.random_range(1..=4),
    );
    let xs = rand_tensor(&mut r, vec![b, steps, feat], -1.0, 1.0);
    let wx = rand_tensor(&mut r, vec![feat, 3 * h], -0.8, 0.8);
    let wh = rand_tensor(&mut r, vec![h, 3 * h], -0.8, 0.8);
    let bx = rand_tensor(&mut r, vec![3 * h], -0.3, 0.3);
    let bh = rand_tensor(&mut r, vec![3 * h], -0.3, 0.3);
    for reverse in [false, true] {
        let name = if reverse { "gru/backward" } else { "gru/forward" };
        let inputs = [
            ("x", xs.clone()),
            ("wx", wx.clone()),
            ("wh", wh.clone()),
            ("bx", bx.clone()),
            ("bh", bh.clone()),
        ];
        reports.push(check_fn(name, &inputs, |t, v| {
            let y = t.gru(v[0], v[1], v[2], v[3], v[4], reverse)?;
            reduce(t, y, seed)
        })?);
    }

    let extra = r.random_range(0..3);
    let other = rand_tensor(&mut r, vec![b, c, l + extra], -1.0, 1.0);
    reports.push(check_fn(
        "add_truncate",
        &[("a", x.clone()), ("b", other)],
        |t, v| {
            let y = t.add_truncate(v[0], v[1])?;
            reduce(t, y, seed)
        },
    )?);
    let same = rand_tensor(&mut r, vec![b, c, l], -1.0, 1.0);
    reports.push(check_fn(
        "add+scale",
        &[("a", x.clone()), ("b", same.clone())],
        |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.scale(y, 0.7);
            reduce(t, y, seed)
        },
    )?);
    reports.push(check_fn(
        "transpose+concat",
        &[("a", x.clone()), ("b", same)],
        |t, v| {
            let y = t.concat(v[0], v[1])?;
            let y = t.transpose(y)?;
            reduce(t, y, seed)
        },
    )?);
    let step = r.random_range(0..l);
    reports.push(check_fn("select_step+flatten", &[("x", x.clone())], |t, v| {
        let tx = t.transpose(v[0])?;
        let y = t.select_step(tx, step)?;
        let f = t.flatten(v[0])?;
        let a = reduce(t, y, seed)?;
        let bsum = reduce(t, f, seed + 1)?;
        let s = t.add(a, bsum)?;
        t.reshape(s, vec![1])
    })?);
    reports.push(check_fn("global_avg_pool", &[("x", x)], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        reduce(t, y, seed)
    })?);

    let logits = rand_tensor(&mut r, vec![b, 11], -4.0, 4.0);
    let targets = Tensor::new(
        vec![b, 11],
        (0..b * 11).map(|_| f64::from(r.random::<bool>())).collect(),
    )?;
    reports.push(check_fn("bce_with_logits", &[("logits", logits)], |t, v| {
        t.bce_with_logits(v[0], &targets)
    })?);
    Ok(reports)
}
