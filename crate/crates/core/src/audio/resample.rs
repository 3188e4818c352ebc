//! Rational-ratio polyphase decimation with a Kaiser-windowed sinc.
//!
//! For a ratio `up / down` (reduced by the gcd of the two rates) the
//! prototype low-pass is sampled at `up` fractional offsets, giving one
//! 64-tap phase per offset. Output sample `m` sits at input position
//! `m * down / up`; its integer part selects the taps, its fractional part
//! the phase.

use super::AudioClip;
use crate::error::{Error, Result};

pub const TAPS_PER_PHASE: usize = 64;
pub const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the target Nyquist frequency.
pub const PASSBAND_FRACTION: f64 = 0.95;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Precomputed filter bank for one source/target rate pair.
#[derive(Clone, Debug)]
pub struct Resampler {
    up: u64,
    down: u64,
    source_rate: u32,
    target_rate: u32,
    /// `up` phases of `TAPS_PER_PHASE` taps each.
    bank: Vec<f64>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if target_rate == 0 || source_rate == 0 {
            return Err(Error::OutOfContract("sample rates must be positive".into()));
        }
        if target_rate > source_rate {
            return Err(Error::OutOfContract(format!(
                "upsampling {source_rate} Hz -> {target_rate} Hz is not supported"
            )));
        }
        let g = gcd(u64::from(source_rate), u64::from(target_rate));
        let up = u64::from(target_rate) / g;
        let down = u64::from(source_rate) / g;

        // Kaiser design: the stopband attenuation implied by beta fixes the
        // transition width for the tap count; the sinc cutoff sits mid-way
        // through the transition so that the passband reaches the edge.
        let atten_db = KAISER_BETA / 0.1102 + 8.7;
        let transition = (atten_db - 7.95) / (14.36 * TAPS_PER_PHASE as f64);
        let passband = PASSBAND_FRACTION * 0.5 * f64::from(target_rate) / f64::from(source_rate);
        let cutoff = (passband + transition / 2.0).min(0.5);

        let half = (TAPS_PER_PHASE / 2) as f64;
        let norm = bessel_i0(KAISER_BETA);
        let mut bank = Vec::with_capacity(up as usize * TAPS_PER_PHASE);
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let start = bank.len();
            for j in 0..TAPS_PER_PHASE {
                // distance from the output position to input tap j
                let t = half - 1.0 - j as f64 + frac;
                let r = (t / half).clamp(-1.0, 1.0);
                let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                bank.push(2.0 * cutoff * sinc(2.0 * cutoff * t) * w);
            }
            // unit DC gain per phase
            let s: f64 = bank[start..].iter().sum();
            bank[start..].iter_mut().for_each(|v| *v /= s);
        }
        Ok(Resampler {
            up,
            down,
            source_rate,
            target_rate,
            bank,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len as u128 * u128::from(self.target_rate) / u128::from(self.source_rate)) as usize
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.source_rate == self.target_rate {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let half = TAPS_PER_PHASE as i64 / 2;
        let len = input.len() as i64;
        (0..n_out as u64)
            .map(|m| {
                let pos = m * self.down;
                let base = (pos / self.up) as i64;
                let phase = (pos % self.up) as usize;
                let taps = &self.bank[phase * TAPS_PER_PHASE..(phase + 1) * TAPS_PER_PHASE];
                let first = base - half + 1;
                let mut acc = 0.0f64;
                for (j, h) in taps.iter().enumerate() {
                    let k = first + j as i64;
                    if (0..len).contains(&k) {
                        acc += f64::from(input[k as usize]) * h;
                    }
                }
                acc as f32
            })
            .collect()
    }
}

/// Resamples a mono clip down to `target_rate`; identity when rates match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    let samples = clip.samples()?;
    if clip.sample_rate() == target_rate {
        return Ok(clip.clone());
    }
    let r = Resampler::new(clip.sample_rate(), target_rate)?;
    Ok(AudioClip::mono(r.process(samples), target_rate))
}
