//! Deterministic synthetic stand-in for IRMAS.
//!
//! Class `c` is a harmonic tone family: its fundamental is drawn from a
//! class register, harmonic amplitudes fall off as `k^-rolloff` (odd
//! harmonics only for every third class) and an amplitude-modulation
//! envelope with a class-specific rate. Tracks mix one or more classes;
//! monophonic sets are class-balanced.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    write_wav, AudioClip, DatasetManifest, Labels, ManifestEntry, ManifestKind, SampleFormat, NUM_FOLDS,
};
use crate::error::{Error, Result};
use crate::{rng, NUM_LABELS, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_tracks: usize,
    pub classes: usize,
    pub seed: u64,
    pub min_polyphony: usize,
    pub max_polyphony: usize,
    pub seconds: u32,
    pub sample_rate: u32,
    pub kind: ManifestKind,
}

impl SynthOptions {
    /// Polyphonic (1 to 3 classes) 3-second test tracks at 22.05 kHz.
    pub fn new(n_tracks: usize, classes: usize, seed: u64) -> Self {
        SynthOptions {
            n_tracks,
            classes,
            seed,
            min_polyphony: 1,
            max_polyphony: 3,
            seconds: 3,
            sample_rate: SAMPLE_RATE,
            kind: ManifestKind::TestTracks,
        }
    }

    pub fn monophonic(mut self) -> Self {
        self.min_polyphony = 1;
        self.max_polyphony = 1;
        self
    }
}

struct Timbre {
    register_hz: f64,
    rolloff: f64,
    odd_only: bool,
    am_rate_hz: f64,
    am_depth: f64,
}

fn timbre(class: usize) -> Timbre {
    let c = class as f64;
    Timbre {
        register_hz: 70.0 * 2f64.powf(0.45 * c),
        rolloff: 0.6 + 0.35 * (class % 4) as f64,
        odd_only: class % 3 == 1,
        am_rate_hz: 1.5 + 1.1 * c,
        am_depth: 0.2 + 0.05 * (class % 5) as f64,
    }
}

fn render_class<R: Rng>(class: usize, len: usize, rate: f64, rng: &mut R, out: &mut [f64]) {
    let t = timbre(class);
    let f0 = t.register_hz * rng.random_range(1.0..1.3);
    let gain = rng.random_range(0.6..1.0);
    let am_phase = rng.random_range(0.0..TAU);
    let harmonics: Vec<(f64, f64, f64)> = (1..=10)
        .filter(|k| !t.odd_only || k % 2 == 1)
        .map(|k| {
            (
                k as f64 * f0,
                (k as f64).powf(-t.rolloff),
                rng.random_range(0.0..TAU),
            )
        })
        .filter(|(f, _, _)| *f < 0.45 * rate)
        .collect();
    for (i, o) in out.iter_mut().enumerate().take(len) {
        let time = i as f64 / rate;
        let env = 1.0 + t.am_depth * (TAU * t.am_rate_hz * time + am_phase).sin();
        let tone: f64 = harmonics
            .iter()
            .map(|(f, a, ph)| a * (TAU * f * time + ph).sin())
            .sum();
        *o += gain * env * tone;
    }
}

/// Renders one track; returns the clip and its label vector. Monophonic
/// tracks take their class from `mono_class`.
fn render_track(opts: &SynthOptions, index: usize, mono_class: Option<usize>) -> (AudioClip, Labels) {
    let mut rng = rng::stream(opts.seed, &format!("{}/{index}", rng::SYNTH));
    let hi = opts.max_polyphony.min(opts.classes).max(1);
    let lo = opts.min_polyphony.clamp(1, hi);
    let mut classes = match mono_class {
        Some(c) => vec![c],
        None => {
            let k = rng.random_range(lo..=hi);
            sample(&mut rng, opts.classes, k).into_vec()
        }
    };
    classes.sort_unstable();

    let len = (opts.seconds * opts.sample_rate) as usize;
    let rate = f64::from(opts.sample_rate);
    let mut mix = vec![0.0f64; len];
    let mut labels = Labels::default();
    for &c in &classes {
        render_class(c, len, rate, &mut rng, &mut mix);
        labels.set(c, true);
    }
    let cur = (mix.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    let target = rng.random_range(0.1..0.3);
    let scale = if cur > 0.0 { target / cur } else { 0.0 };
    let samples = mix
        .iter()
        .map(|v| (v * scale + rng.random_range(-0.005..0.005)).clamp(-1.0, 0.999) as f32)
        .collect();
    (AudioClip::mono(samples, opts.sample_rate), labels)
}

/// Writes `tracks/track_NNNNN.wav` files and `manifest.tsv` under `out_dir`.
/// Training-kind datasets get 5 round-robin folds.
pub fn synth_dataset(out_dir: &Path, opts: &SynthOptions) -> Result<DatasetManifest> {
    if opts.classes < 1 || opts.classes > NUM_LABELS {
        return Err(Error::OutOfContract(format!(
            "classes must be in 1..={NUM_LABELS}, got {}",
            opts.classes
        )));
    }
    if opts.n_tracks == 0 {
        return Err(Error::OutOfContract("n_tracks must be positive".into()));
    }
    let tracks = out_dir.join("tracks");
    fs::create_dir_all(&tracks).map_err(|e| Error::io(&tracks, e))?;
    // Monophonic sets deal classes evenly in a seeded order.
    let mono: Option<Vec<usize>> = (opts.max_polyphony <= 1).then(|| {
        let mut order: Vec<usize> = (0..opts.n_tracks).map(|i| i % opts.classes).collect();
        order.shuffle(&mut rng::stream(opts.seed, &format!("{}/classes", rng::SYNTH)));
        order
    });
    let mut entries = Vec::with_capacity(opts.n_tracks);
    for i in 0..opts.n_tracks {
        let (clip, labels) = render_track(opts, i, mono.as_ref().map(|m| m[i]));
        let rel = PathBuf::from("tracks").join(format!("track_{i:05}.wav"));
        let path = out_dir.join(&rel);
        fs::write(&path, write_wav(&clip, SampleFormat::Pcm16)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            path: rel,
            labels,
            fold: None,
        });
    }
    let mut m = DatasetManifest::new(out_dir.to_path_buf(), entries, opts.kind);
    if opts.kind == ManifestKind::TrainSegments {
        m.assign_folds(NUM_FOLDS, opts.seed);
    }
    m.write(&out_dir.join("manifest.tsv"))?;
    Ok(m)
}
