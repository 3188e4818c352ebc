//! Binary checkpoint format.
//!
//! ```text
//! RAWINST-CKPT 1
//! variant <tag>
//! input_len <samples>
//! labels <comma-separated codes>
//! tensors <n>
//! <name> <trainable|state> <d0>x<d1>x...     (n lines, declaration order)
//! end
//! <f32 little-endian payloads in the same order>
//! <u64 LE byte length of everything above><u64 LE FNV-1a of the same bytes>
//! ```

use std::path::Path;

use super::{ModelGraph, Variant};
use crate::error::{Error, Result};
use crate::tensor::{ParamKind, Real};
use crate::LABEL_CODES;

pub const CHECKPOINT_MAGIC: &str = "RAWINST-CKPT";
const VERSION: u32 = 1;
const TRAILER: usize = 16;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Trainable => "trainable",
        ParamKind::State => "state",
    }
}

pub(super) fn encode<T: Real>(model: &ModelGraph<T>) -> Vec<u8> {
    let params = model.params();
    let mut header = format!(
        "{CHECKPOINT_MAGIC} {VERSION}\nvariant {}\ninput_len {}\nlabels {}\ntensors {}\n",
        model.variant(),
        model.input_len(),
        LABEL_CODES.join(","),
        params.len()
    );
    for p in params.iter() {
        let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{} {} {}\n", p.name, kind_name(p.kind), dims.join("x")));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for p in params.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let len = out.len() as u64;
    let sum = fnv1a(&out);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Header {
    variant: Variant,
    input_len: usize,
    tensors: Vec<(String, String, Vec<usize>)>,
    payload_offset: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Verifies the trailer and returns the covered body.
fn body(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < TRAILER {
        return Err(bad("file shorter than its trailer"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
    let len = u64::from_le_bytes(trailer[..8].try_into().expect("8 bytes"));
    let sum = u64::from_le_bytes(trailer[8..].try_into().expect("8 bytes"));
    if len != body.len() as u64 {
        return Err(bad(format!(
            "trailer length {len} but body is {} bytes",
            body.len()
        )));
    }
    if sum != fnv1a(body) {
        return Err(bad("checksum mismatch"));
    }
    Ok(body)
}

fn parse_header(body: &[u8]) -> Result<Header> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &body[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let mut it = lines.into_iter();
    let mut field = |key: &str| -> Result<&str> {
        it.next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .ok_or_else(|| bad(format!("missing '{key}' line")))
    };
    let version = field(CHECKPOINT_MAGIC)?;
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let variant: Variant = field("variant")?.parse()?;
    let input_len = field("input_len")?.parse().map_err(|_| bad("bad input_len"))?;
    let labels = field("labels")?;
    if labels != LABEL_CODES.join(",") {
        return Err(bad(format!("label order '{labels}' differs from this build")));
    }
    let n: usize = field("tensors")?.parse().map_err(|_| bad("bad tensor count"))?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let line = it
            .next()
            .ok_or_else(|| bad("tensor list shorter than declared"))?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, kind, dims] = parts[..] else {
            return Err(bad(format!("malformed tensor line '{line}'")));
        };
        let dims = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad dims in '{line}'")))?;
        tensors.push((name.to_string(), kind.to_string(), dims));
    }
    if it.next().is_some() {
        return Err(bad("tensor list longer than declared"));
    }
    Ok(Header {
        variant,
        input_len,
        tensors,
        payload_offset: pos,
    })
}

/// Variant and input length recorded in a checkpoint.
pub fn peek_variant(bytes: &[u8]) -> Result<(Variant, usize)> {
    let h = parse_header(body(bytes)?)?;
    Ok((h.variant, h.input_len))
}

pub(super) fn decode_into<T: Real>(model: &mut ModelGraph<T>, bytes: &[u8]) -> Result<()> {
    let body = body(bytes)?;
    let h = parse_header(body)?;
    if h.variant != model.variant() {
        return Err(bad(format!(
            "checkpoint holds a {} model, expected {}",
            h.variant,
            model.variant()
        )));
    }
    if h.input_len != model.input_len() {
        return Err(bad(format!(
            "checkpoint input length {} differs from {}",
            h.input_len,
            model.input_len()
        )));
    }
    if h.tensors.len() != model.params().len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, model has {}",
            h.tensors.len(),
            model.params().len()
        )));
    }
    for ((name, kind, dims), p) in h.tensors.iter().zip(model.params().iter()) {
        if name != &p.name || kind != kind_name(p.kind) || dims.as_slice() != p.tensor.shape() {
            return Err(bad(format!(
                "tensor {name} {kind} {dims:?} does not match {} {} {:?}",
                p.name,
                kind_name(p.kind),
                p.tensor.shape()
            )));
        }
    }
    let payload = &body[h.payload_offset..];
    let expected: usize = model.params().iter().map(|p| p.tensor.len() * 4).sum();
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(4);
    for p in model.params_mut().iter_mut() {
        for v in p.tensor.data_mut() {
            let raw = chunks.next().expect("payload size checked");
            *v = T::from_f64_lossy(f64::from(f32::from_le_bytes(raw.try_into().expect("4 bytes"))));
        }
        p.grad = None;
    }
    model.mark_stats_ready();
    Ok(())
}

/// Writes `model` to `path`.
pub fn save_checkpoint<T: Real>(model: &ModelGraph<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, building the recorded variant around it.
pub fn load_checkpoint(path: &Path) -> Result<ModelGraph<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (variant, input_len) = peek_variant(&bytes)?;
    let mut model = ModelGraph::build_with_input_len(variant, 0, input_len)?;
    decode_into(&mut model, &bytes)?;
    Ok(model)
}
