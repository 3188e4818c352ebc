//! Waveform ingestion: decoding, canonical preprocessing, segmentation and
//! dataset manifests.

mod dataset;
mod resample;
mod synth;
mod wav;

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{label_index, LABEL_CODES, NUM_LABELS, SAMPLE_RATE, SEGMENT_LEN};

pub use dataset::{
    load_irmas_test, load_irmas_train, DatasetManifest, ManifestEntry, ManifestKind, NUM_FOLDS,
};
pub use resample::{resample, Resampler, KAISER_BETA, TAPS_PER_PHASE};
pub use synth::{synth_dataset, SynthOptions};
pub use wav::{parse_wav, write_wav, SampleFormat};

/// RMS below which a window is treated as silence.
pub const SILENCE_FLOOR: f64 = 1e-8;

/// Decoded audio, one buffer per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::OutOfContract("clip needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(Error::OutOfContract("sample rate must be positive".into()));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::OutOfContract("channels differ in length".into()));
        }
        Ok(AudioClip {
            channels,
            sample_rate,
        })
    }

    /// Panics on a zero sample rate.
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self::new(vec![samples], sample_rate).expect("valid mono clip")
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single channel of a mono clip.
    pub fn samples(&self) -> Result<&[f32]> {
        match self.channels.as_slice() {
            [only] => Ok(only),
            _ => Err(Error::OutOfContract(format!(
                "expected a mono clip, got {} channels",
                self.channels.len()
            ))),
        }
    }

    pub fn into_mono_samples(self) -> Result<Vec<f32>> {
        self.samples()?;
        Ok(self.channels.into_iter().next().unwrap())
    }
}

/// Multi-hot instrument vector in [`LABEL_CODES`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Labels([bool; NUM_LABELS]);

impl Labels {
    pub fn one_hot(index: usize) -> Self {
        let mut l = Labels::default();
        l.0[index] = true;
        l
    }

    pub fn from_bools(v: [bool; NUM_LABELS]) -> Self {
        Labels(v)
    }

    pub fn from_codes<'a>(codes: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut l = Labels::default();
        for code in codes {
            let i = label_index(code).ok_or_else(|| {
                Error::Manifest(format!(
                    "unknown instrument code `{code}`; expected one of {}",
                    LABEL_CODES.join(",")
                ))
            })?;
            l.0[i] = true;
        }
        Ok(l)
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = on;
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn as_array(&self) -> &[bool; NUM_LABELS] {
        &self.0
    }

    pub fn codes(&self) -> Vec<&'static str> {
        (0..NUM_LABELS)
            .filter(|&i| self.0[i])
            .map(|i| LABEL_CODES[i])
            .collect()
    }

    pub fn to_f32(&self) -> [f32; NUM_LABELS] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for Labels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.codes().join(","))
    }
}

/// One second of normalized 22.05 kHz audio with its track labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub waveform: Vec<f32>,
    pub labels: Labels,
    pub source_track_id: String,
    pub offset_sec: u32,
}

/// Stereo to mono by per-sample mean; mono passes through.
pub fn downmix(clip: &AudioClip) -> Result<AudioClip> {
    match clip.channels.as_slice() {
        [_] => Ok(clip.clone()),
        [l, r] => {
            let mono = l.iter().zip(r).map(|(a, b)| (a + b) * 0.5).collect();
            Ok(AudioClip::mono(mono, clip.sample_rate))
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{} channels; downmix handles mono or stereo",
            clip.channel_count()
        ))),
    }
}

pub fn rms(signal: &[f32]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    let ss: f64 = signal.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    (ss / signal.len() as f64).sqrt()
}

/// Divides by `max(rms, SILENCE_FLOOR)`.
pub fn rms_normalize(signal: &[f32]) -> Result<Vec<f32>> {
    if signal.is_empty() {
        return Err(Error::OutOfContract("cannot normalize an empty signal".into()));
    }
    let scale = 1.0 / rms(signal).max(SILENCE_FLOOR);
    Ok(signal.iter().map(|&v| (f64::from(v) * scale) as f32).collect())
}

/// Downmixes then resamples to the model rate.
pub fn preprocess(clip: &AudioClip) -> Result<AudioClip> {
    let mono = downmix(clip)?;
    resample(&mono, SAMPLE_RATE)
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Reads and preprocesses a WAV file to mono 22.05 kHz.
pub fn load_track(path: &Path) -> Result<AudioClip> {
    preprocess(&load_wav(path)?)
}

/// Cuts consecutive non-overlapping 1-second windows, discarding the
/// remainder, and RMS-normalizes each window on its own.
pub fn segment_clip(clip: &AudioClip, labels: Labels, track_id: &str) -> Result<Vec<Segment>> {
    if clip.sample_rate() != SAMPLE_RATE {
        return Err(Error::OutOfContract(format!(
            "segmenting needs {SAMPLE_RATE} Hz audio, got {} Hz",
            clip.sample_rate()
        )));
    }
    let samples = clip.samples()?;
    if samples.len() < SEGMENT_LEN {
        log::warn!(
            "{track_id}: {} samples is shorter than one {SEGMENT_LEN}-sample segment; no segments emitted",
            samples.len()
        );
        return Ok(Vec::new());
    }
    samples
        .chunks_exact(SEGMENT_LEN)
        .enumerate()
        .map(|(i, w)| {
            Ok(Segment {
                waveform: rms_normalize(w)?,
                labels,
                source_track_id: track_id.to_string(),
                offset_sec: i as u32,
            })
        })
        .collect()
}
