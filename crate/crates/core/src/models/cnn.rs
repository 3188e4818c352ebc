//! The convolutional cell stack shared by DCNN, FCN, RFCN and the CRNN base.

use super::layers::{BatchNorm, Conv};
use super::Mode;
use crate::error::Result;
use crate::tensor::{BatchStats, ParamStore, Real, Tape, Var};

/// Filter count, kernel size and pool size of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnnCellConfig {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// The canonical five-cell stack.
pub const CANONICAL_CELLS: [CnnCellConfig; 5] = [
    CnnCellConfig {
        filters: 16,
        kernel: 3,
        pool: 3,
    },
    CnnCellConfig {
        filters: 32,
        kernel: 3,
        pool: 3,
    },
    CnnCellConfig {
        filters: 64,
        kernel: 3,
        pool: 3,
    },
    CnnCellConfig {
        filters: 64,
        kernel: 5,
        pool: 5,
    },
    CnnCellConfig {
        filters: 32,
        kernel: 5,
        pool: 5,
    },
];

/// conv → conv → batch norm → leaky ReLU → max pool.
#[derive(Clone, Debug)]
pub(crate) struct CnnCell {
    pub cfg: CnnCellConfig,
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub bn: BatchNorm,
}

/// A residual path from the output of cell `from` to the output of cell `to`
/// (both 0-based), aligned by max pooling and a unit-kernel projection.
#[derive(Clone, Debug)]
pub(crate) struct Skip {
    pub from: usize,
    pub to: usize,
    pub pool: usize,
    pub proj: Conv,
}

/// BN batch statistics produced by one train-mode forward, applied to the
/// running averages afterwards.
pub(crate) type StatUpdates = Vec<(BatchNorm, BatchStats)>;

#[derive(Clone, Debug)]
pub(crate) struct CnnStack {
    pub cells: Vec<CnnCell>,
    pub skips: Vec<Skip>,
}

impl CnnStack {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        configs: &[CnnCellConfig],
        with_skips: bool,
    ) -> Self {
        let mut cells = Vec::with_capacity(configs.len());
        let mut c_in = 1;
        for (i, cfg) in configs.iter().enumerate() {
            let name = format!("cell{}", i + 1);
            cells.push(CnnCell {
                cfg: *cfg,
                conv_a: Conv::new(
                    store,
                    seed,
                    &format!("{name}.conv_a"),
                    c_in,
                    cfg.filters,
                    cfg.kernel,
                ),
                conv_b: Conv::new(
                    store,
                    seed,
                    &format!("{name}.conv_b"),
                    cfg.filters,
                    cfg.filters,
                    cfg.kernel,
                ),
                bn: BatchNorm::new(store, &format!("{name}.bn"), cfg.filters),
            });
            c_in = cfg.filters;
        }
        let mut skips = Vec::new();
        if with_skips {
            for (from, to) in [(0usize, 2usize), (1, 3)] {
                // Pool by the product of the pools the main path applies
                // between the two outputs.
                let pool: usize = configs[from + 1..=to].iter().map(|c| c.pool).product();
                let name = format!("skip{}_{}", from + 1, to + 1);
                let proj = Conv::new(
                    store,
                    seed,
                    &format!("{name}.proj"),
                    configs[from].filters,
                    configs[to].filters,
                    1,
                );
                skips.push(Skip { from, to, pool, proj });
            }
        }
        CnnStack { cells, skips }
    }

    pub fn out_channels(&self) -> usize {
        self.cells.last().map_or(1, |c| c.cfg.filters)
    }

    /// Output lengths of each cell for an input of `len` samples.
    pub fn lengths(&self, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cells.len());
        let mut l = len;
        for c in &self.cells {
            l /= c.cfg.pool;
            out.push(l);
        }
        out
    }

    /// Runs the stack and returns every cell's (post-skip) output.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
        updates: &mut StatUpdates,
    ) -> Result<Vec<Var>> {
        let mut outs: Vec<Var> = Vec::with_capacity(self.cells.len());
        let mut h = x;
        for (i, cell) in self.cells.iter().enumerate() {
            h = cell.conv_a.apply(tape, store, h)?;
            h = cell.conv_b.apply(tape, store, h)?;
            h = match mode {
                Mode::Train => {
                    let (y, stats) = cell.bn.apply_train(tape, store, h)?;
                    updates.push((cell.bn.clone(), stats));
                    y
                }
                Mode::Infer => cell.bn.apply_infer(tape, store, h)?,
            };
            h = tape.leaky_relu(h);
            h = tape.maxpool1d(h, cell.cfg.pool)?;
            for skip in self.skips.iter().filter(|s| s.to == i) {
                let s = tape.maxpool1d(outs[skip.from], skip.pool)?;
                let s = skip.proj.apply(tape, store, s)?;
                h = tape.add_truncate(h, s)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }
}
