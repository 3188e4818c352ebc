//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float.

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encoding of a WAV payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

impl SampleFormat {
    fn bytes(self) -> usize {
        match self {
            SampleFormat::Pcm16 => 2,
            SampleFormat::Float32 => 4,
        }
    }
}

struct Fmt {
    format: SampleFormat,
    channels: usize,
    sample_rate: u32,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Fmt> {
    if body.len() < 16 {
        return Err(Error::decode(
            "fmt",
            format!("{} bytes, need at least 16", body.len()),
        ));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(Error::decode("fmt", "extensible format without sub-format"));
        }
        tag = u16_at(body, 24);
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit integer PCM"))),
        (FORMAT_FLOAT, b) => return Err(Error::UnsupportedFormat(format!("{b}-bit float"))),
        (t, b) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {t:#06x} ({b}-bit); only PCM16 and float32 are read"
            )))
        }
    };
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(Error::decode("fmt", "sample rate is 0"));
    }
    Ok(Fmt {
        format,
        channels: channels as usize,
        sample_rate,
    })
}

/// Decodes a WAV byte buffer. PCM samples are scaled by `1 / 32768`.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::decode("RIFF", "file shorter than the 12-byte RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::decode("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::decode("WAVE", "RIFF form type is not WAVE"));
    }
    let mut fmt: Option<Fmt> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let name = String::from_utf8_lossy(id).trim_end().to_string();
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| {
                Error::decode(
                    name.clone(),
                    format!("declares {size} bytes but only {} remain", bytes.len() - start),
                )
            })?;
        let body = &bytes[start..end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => {
                let f = fmt.ok_or_else(|| Error::decode("fmt", "data chunk precedes fmt chunk"))?;
                return decode_data(body, &f);
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    match fmt {
        None => Err(Error::decode("fmt", "no fmt chunk")),
        Some(_) => Err(Error::decode("data", "no data chunk")),
    }
}

fn decode_data(body: &[u8], f: &Fmt) -> Result<AudioClip> {
    let frame = f.channels * f.format.bytes();
    if !body.len().is_multiple_of(frame) {
        return Err(Error::decode(
            "data",
            format!(
                "{} bytes is not a whole number of {frame}-byte frames",
                body.len()
            ),
        ));
    }
    let frames = body.len() / frame;
    let mut channels = vec![Vec::with_capacity(frames); f.channels];
    for (i, chunk) in body.chunks_exact(f.format.bytes()).enumerate() {
        let v = match f.format {
            SampleFormat::Pcm16 => f32::from(i16::from_le_bytes([chunk[0], chunk[1]])) / 32768.0,
            SampleFormat::Float32 => f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]),
        };
        channels[i % f.channels].push(v);
    }
    AudioClip::new(channels, f.sample_rate)
}

/// Encodes a clip. PCM16 output rounds `x * 32768` and saturates.
pub fn write_wav(clip: &AudioClip, format: SampleFormat) -> Vec<u8> {
    let channels = clip.channel_count();
    let frames = clip.len();
    let data_len = frames * channels * format.bytes();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let tag = match format {
        SampleFormat::Pcm16 => FORMAT_PCM,
        SampleFormat::Float32 => FORMAT_FLOAT,
    };
    let block = (channels * format.bytes()) as u16;
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * u32::from(block)).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&((format.bytes() * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for t in 0..frames {
        for ch in clip.channels() {
            let v = ch[t];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (f64::from(v) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2 * u32::from(channels)).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        b
    }

    #[test]
    fn pcm_scaling() {
        let clip = parse_wav(&pcm16(&[0, 16384, -32768], 1, 44100)).unwrap();
        assert_eq!(clip.channels()[0], vec![0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate(), 44100);
    }

    #[test]
    fn empty_payload() {
        let bytes = pcm16(&[], 1, 22050);
        assert_eq!(bytes.len(), 44);
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.len(), 0);
        assert_eq!(clip.sample_rate(), 22050);
    }

    #[test]
    fn stereo_deinterleaves() {
        let clip = parse_wav(&pcm16(&[1, 2, 3, 4], 2, 8000)).unwrap();
        assert_eq!(clip.channel_count(), 2);
        assert_eq!(clip.channels()[1], vec![2.0 / 32768.0, 4.0 / 32768.0]);
    }

    #[test]
    fn float_round_trip() {
        let clip = AudioClip::mono(vec![0.25, -0.75, 1.5], 16000);
        let back = parse_wav(&write_wav(&clip, SampleFormat::Float32)).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn malformed_headers_name_the_chunk() {
        let mut b = pcm16(&[1, 2], 1, 8000);
        b[0] = b'X';
        assert!(matches!(parse_wav(&b), Err(Error::Decode { ref chunk, .. }) if chunk == "RIFF"));

        let mut b = pcm16(&[1, 2], 1, 8000);
        b[40] = 200; // data size now exceeds the file
        assert!(matches!(parse_wav(&b), Err(Error::Decode { ref chunk, .. }) if chunk == "data"));

        let b = pcm16(&[1, 2], 1, 8000);
        assert!(matches!(parse_wav(&b[..30]), Err(Error::Decode { ref chunk, .. }) if chunk == "fmt"));
    }

    #[test]
    fn unsupported_encodings() {
        let mut b = pcm16(&[1, 2, 3], 1, 8000);
        b[34] = 24; // bits per sample
        assert!(matches!(parse_wav(&b), Err(Error::UnsupportedFormat(_))));
        let mut b = pcm16(&[1, 2], 1, 8000);
        b[20] = 2; // ADPCM tag
        assert!(matches!(parse_wav(&b), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = pcm16(&[7, -7], 1, 8000);
        let mut b = plain[..36].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        b.extend_from_slice(&plain[36..]);
        assert_eq!(parse_wav(&b).unwrap(), parse_wav(&plain).unwrap());
    }
}
