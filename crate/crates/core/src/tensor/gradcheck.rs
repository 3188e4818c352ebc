//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

pub use super::op_suite::op_gradient_suite;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Fourth-order central difference at step [`FD_STEP`]:
/// `(8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h`.
///
/// The two-point quotient's `h^2/6 * f'''` truncation error exceeds 1e-4 of
/// the derivative wherever the derivative nearly cancels (a few percent of
/// random GRU and small-batch BN instances at h = 1e-3); this stencil's
/// error is `O(h^4)`.
pub fn central_difference<F>(mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h = FD_STEP;
    let near = f(h)? - f(-h)?;
    let far = f(2.0 * h)? - f(-2.0 * h)?;
    Ok((8.0 * near - far) / (12.0 * h))
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{}\t{}\t{:?}\t{}\t{:.3e}",
                self.op, e.name, e.shape, e.checked, e.max_rel_err
            )?;
        }
        Ok(())
    }
}

/// One differentiable quantity: its analytic gradient and where it lives.
pub struct Probe {
    pub name: String,
    pub shape: Vec<usize>,
    pub analytic: Vec<f64>,
}

/// Compares analytic gradients with central differences. `loss_at(p, i, d)`
/// must evaluate the loss with coordinate `i` of probe `p` shifted by `d`.
/// With `sample_per_probe = Some(k)` only `k` seeded-random coordinates of
/// each probe are checked.
pub fn compare<F>(
    op: &str,
    probes: &[Probe],
    sample_per_probe: Option<usize>,
    seed: u64,
    mut loss_at: F,
) -> Result<GradCheckReport>
where
    F: FnMut(usize, usize, f64) -> Result<f64>,
{
    let mut rng = rng::stream(seed, "gradcheck");
    let mut entries = Vec::with_capacity(probes.len());
    for (pi, probe) in probes.iter().enumerate() {
        let n = probe.analytic.len();
        let coords: Vec<usize> = match sample_per_probe {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &i in &coords {
            let numeric = central_difference(|d| loss_at(pi, i, d))?;
            let a = probe.analytic[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        entries.push(GradCheckEntry {
            name: probe.name.clone(),
            shape: probe.shape.clone(),
            checked: coords.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        entries,
    })
}

/// Checks every input coordinate of a scalar-valued tape fragment.
/// Perturbed evaluations keep the max-pool winners and leaky-ReLU sides of
/// the unperturbed pass (see [`Tape::replay_branches`]).
pub fn check_fn<F>(op: &str, inputs: &[(&str, Tensor<f64>)], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.record_branches();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let branches = tape.take_branch_log().unwrap_or_default();
    let probes: Vec<Probe> = inputs
        .iter()
        .zip(&vars)
        .map(|((name, t), v)| Probe {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            analytic: grads
                .get(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()]),
        })
        .collect();
    let eval = |pi: usize, i: usize, d: f64| -> Result<f64> {
        let mut tape = Tape::new();
        tape.replay_branches(branches.clone());
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, (_, t))| {
                let mut t = t.clone();
                if k == pi {
                    t.data_mut()[i] += d;
                }
                tape.constant(t)
            })
            .collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };
    compare(op, &probes, None, 0, eval)
}
