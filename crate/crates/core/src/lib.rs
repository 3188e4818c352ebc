//! End-to-end instrument recognition from raw audio waveforms.
//!
//! The crate is split along the pipeline:
//!
//! * [`audio`] decodes WAV files, resamples to 22.05 kHz, downmixes, cuts
//!   1-second RMS-normalized segments and loads dataset manifests.
//! * [`tensor`] is a small dense tensor engine with a reverse-mode tape,
//!   the Adam optimizer and a finite-difference gradient checker.
//! * [`models`] builds the recurrent, convolutional, residual and combined
//!   architectures and handles checkpoints.
//! * [`training`] runs the optimization protocol (plateau LR decay, early
//!   stopping, k-fold splits).
//! * [`eval`] turns segment activations into track predictions and scores
//!   them with F1 micro/macro and LRAP.

pub mod audio;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Number of instrument classes.
pub const NUM_LABELS: usize = 11;

/// IRMAS instrument codes in label-vector order.
pub const LABEL_CODES: [&str; NUM_LABELS] = [
    "cel", "cla", "flu", "gac", "gel", "org", "pia", "sax", "tru", "vio", "voi",
];

/// Canonical model sample rate in Hz.
pub const SAMPLE_RATE: u32 = 22_050;

/// Samples per 1-second segment.
pub const SEGMENT_LEN: usize = 22_050;

/// Index of an instrument code in [`LABEL_CODES`].
pub fn label_index(code: &str) -> Option<usize> {
    LABEL_CODES.iter().position(|c| *c == code)
}
