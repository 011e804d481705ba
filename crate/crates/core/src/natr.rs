//! On-disk trace formats.
//!
//! Binary "NATR v1" (little-endian throughout):
//!
//! ```text
//! header  : b"NATR" | version u32 = 1 | label_len u32 | label utf-8
//!           | L u32 | J_0 .. J_{L-1} (u32 each)
//! records : repeated until EOF
//!           id_len u32 | id utf-8 | token_count u32
//!           | for each layer: first[J_l] | last[J_l] | mean[J_l]  (f32)
//! ```
//!
//! JSONL: a header object on the first line, then one object per trace.
//! Floats are written in the shortest form that parses back to the same
//! `f32`, and on reading any number that does not denote an `f32` exactly
//! in that sense is rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NaitError, Result};
use crate::fsio::{read_file, write_atomic};
use crate::trace::{ActivationTrace, LayerActivation, TraceSet};

pub const MAGIC: [u8; 4] = *b"NATR";
pub const VERSION: u32 = 1;
pub const JSONL_MAGIC: &str = "NATR-JSONL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Jsonl,
}

impl std::str::FromStr for TraceFormat {
    type Err = NaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TraceFormat::Binary),
            "jsonl" => Ok(TraceFormat::Jsonl),
            other => Err(NaitError::Config(format!("unknown trace format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadFormat {
    Binary,
    Jsonl,
    #[default]
    Auto,
}

impl From<TraceFormat> for ReadFormat {
    fn from(f: TraceFormat) -> Self {
        match f {
            TraceFormat::Binary => ReadFormat::Binary,
            TraceFormat::Jsonl => ReadFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteSummary {
    pub bytes_written: u64,
    pub record_count: usize,
}

/// Sniff the format from the leading bytes.
pub fn detect_format(bytes: &[u8]) -> Result<TraceFormat> {
    if bytes.starts_with(&MAGIC) {
        return Ok(TraceFormat::Binary);
    }
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => Ok(TraceFormat::Jsonl),
        _ => Err(NaitError::format(None, "neither NATR magic nor a JSONL header object")),
    }
}

/// Read and fully validate a trace file.
pub fn read_traces(path: impl AsRef<Path>, format: ReadFormat) -> Result<TraceSet> {
    let set = read_traces_unchecked(path, format)?;
    set.check()?;
    Ok(set)
}

/// Read a trace file, checking only what is needed to parse it. Semantic
/// invariants (duplicate ids, non-finite values, per-record dimensions in
/// JSONL) are left for [`TraceSet::validate`].
pub fn read_traces_unchecked(path: impl AsRef<Path>, format: ReadFormat) -> Result<TraceSet> {
    let bytes = read_file(path.as_ref())?;
    decode(&bytes, format, false)
}

pub fn decode(bytes: &[u8], format: ReadFormat, checked: bool) -> Result<TraceSet> {
    let format = match format {
        ReadFormat::Binary => TraceFormat::Binary,
        ReadFormat::Jsonl => TraceFormat::Jsonl,
        ReadFormat::Auto => detect_format(bytes)?,
    };
    let set = match format {
        TraceFormat::Binary => decode_binary(bytes)?,
        TraceFormat::Jsonl => {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| NaitError::format(None, format!("JSONL is not UTF-8: {e}")))?;
            decode_jsonl(text, checked)?
        }
    };
    if checked {
        set.check()?;
    }
    Ok(set)
}

pub fn write_traces(set: &TraceSet, path: impl AsRef<Path>, format: TraceFormat) -> Result<WriteSummary> {
    let bytes = encode(set, format)?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(WriteSummary {
        bytes_written: bytes.len() as u64,
        record_count: set.len(),
    })
}

pub fn encode(set: &TraceSet, format: TraceFormat) -> Result<Vec<u8>> {
    set.check()?;
    match format {
        TraceFormat::Binary => Ok(encode_binary(set)),
        TraceFormat::Jsonl => Ok(encode_jsonl(set).into_bytes()),
    }
}

/// Read `path_in` (format sniffed) and write it to `path_out` as `format_out`.
pub fn convert(path_in: impl AsRef<Path>, path_out: impl AsRef<Path>, format_out: TraceFormat) -> Result<WriteSummary> {
    let set = read_traces(path_in, ReadFormat::Auto)?;
    write_traces(&set, path_out, format_out)
}

// ---------------------------------------------------------------- binary

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn encode_binary(set: &TraceSet) -> Vec<u8> {
    let payload: usize = set.layer_dims.iter().sum::<usize>() * 12 + 8;
    let mut out = Vec::with_capacity(64 + set.len() * (payload + 16));
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &set.source_label);
    put_u32(&mut out, set.layer_dims.len() as u32);
    for &j in &set.layer_dims {
        put_u32(&mut out, j as u32);
    }
    for t in &set.traces {
        put_str(&mut out, &t.sample_id);
        put_u32(&mut out, t.token_count);
        for l in &t.layers {
            put_f32s(&mut out, &l.first);
            put_f32s(&mut out, &l.last);
            put_f32s(&mut out, &l.mean);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: Option<usize>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            let msg = format!(
                "truncated while reading {what}: need {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            );
            return Err(NaitError::format(self.record, msg));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|e| NaitError::format(self.record, format!("{what} is not UTF-8: {e}")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_binary(bytes: &[u8]) -> Result<TraceSet> {
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        record: None,
    };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(NaitError::format(None, format!("bad magic {magic:02x?}")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(NaitError::format(None, format!("unsupported NATR version {version}")));
    }
    let source_label = cur.string("source_label")?;
    let num_layers = cur.u32("layer count")? as usize;
    // Each layer width costs 4 header bytes, so this bounds the allocation.
    if num_layers > (bytes.len() - cur.pos) / 4 {
        return Err(NaitError::format(None, format!("layer count {num_layers} exceeds file size")));
    }
    let mut layer_dims = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        layer_dims.push(cur.u32(&format!("width of layer {l}"))? as usize);
    }

    let mut traces = Vec::new();
    while !cur.at_end() {
        let idx = traces.len();
        cur.record = Some(idx);
        let sample_id = cur.string("sample_id")?;
        let token_count = cur.u32("token_count")?;
        let mut layers = Vec::with_capacity(num_layers);
        for (l, &j) in layer_dims.iter().enumerate() {
            let first = cur.f32s(j, &format!("layer {l} first"))?;
            let last = cur.f32s(j, &format!("layer {l} last"))?;
            let mean = cur.f32s(j, &format!("layer {l} mean"))?;
            layers.push(LayerActivation::new(l, first, last, mean));
        }
        traces.push(ActivationTrace::new(sample_id, token_count, layers));
    }
    Ok(TraceSet {
        source_label,
        layer_dims,
        traces,
    })
}

// ---------------------------------------------------------------- jsonl

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlHeader {
    magic: String,
    version: u32,
    source_label: String,
    layer_dims: Vec<usize>,
}

#[derive(Serialize)]
struct JsonlLayerOut<'a> {
    first: &'a [f32],
    last: &'a [f32],
    mean: &'a [f32],
}

#[derive(Serialize)]
struct JsonlRecordOut<'a> {
    sample_id: &'a str,
    token_count: u32,
    layers: Vec<JsonlLayerOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlLayerIn {
    first: Vec<f64>,
    last: Vec<f64>,
    mean: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecordIn {
    sample_id: String,
    token_count: u32,
    layers: Vec<JsonlLayerIn>,
}

fn encode_jsonl(set: &TraceSet) -> String {
    let header = JsonlHeader {
        magic: JSONL_MAGIC.to_string(),
        version: VERSION,
        source_label: set.source_label.clone(),
        layer_dims: set.layer_dims.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &set.traces {
        let rec = JsonlRecordOut {
            sample_id: &t.sample_id,
            token_count: t.token_count,
            layers: t
                .layers
                .iter()
                .map(|l| JsonlLayerOut {
                    first: &l.first,
                    last: &l.last,
                    mean: &l.mean,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Narrow a parsed JSON number to `f32`. The number is accepted only if it
/// is the exact value of the nearest `f32`, or the shortest decimal form of
/// that `f32` as produced by either of the two usual shortest-digit
/// formatters (they may break ties between equally short digit strings
/// differently).
pub fn exact_f32(x: f64) -> Option<f32> {
    let f = x as f32;
    if !f.is_finite() {
        return None;
    }
    if f as f64 == x {
        return Some(f);
    }
    let std_form: f64 = format!("{f:e}").parse().ok()?;
    let ryu_form: f64 = ryu::Buffer::new().format_finite(f).parse().ok()?;
    (std_form == x || ryu_form == x).then_some(f)
}

fn narrow(values: Vec<f64>, record: usize, what: &str) -> Result<Vec<f32>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            exact_f32(x).ok_or_else(|| {
                NaitError::format(Some(record), format!("{what}[{i}] = {x} is not an exact float32 value"))
            })
        })
        .collect()
}

fn decode_jsonl(text: &str, checked: bool) -> Result<TraceSet> {
    let mut lines = text.split('\n');
    let header_line = lines.next().unwrap_or("");
    let header: JsonlHeader = serde_json::from_str(header_line)
        .map_err(|e| NaitError::format(None, format!("bad JSONL header: {e}")))?;
    if header.magic != JSONL_MAGIC {
        return Err(NaitError::format(None, format!("bad JSONL magic {:?}", header.magic)));
    }
    if header.version != VERSION {
        return Err(NaitError::format(None, format!("unsupported NATR-JSONL version {}", header.version)));
    }

    let rest: Vec<&str> = lines.collect();
    // A single trailing newline is allowed; blank lines elsewhere are not.
    let body = match rest.split_last() {
        Some((last, init)) if last.is_empty() => init,
        _ => &rest[..],
    };
    let mut traces = Vec::with_capacity(body.len());
    for (idx, line) in body.iter().enumerate() {
        if line.trim().is_empty() {
            return Err(NaitError::format(Some(idx), "blank line in record stream"));
        }
        let rec: JsonlRecordIn = serde_json::from_str(line)
            .map_err(|e| NaitError::format(Some(idx), format!("malformed record: {e}")))?;
        if checked && rec.layers.len() != header.layer_dims.len() {
            return Err(NaitError::format(
                Some(idx),
                format!("{} layers, header declares {}", rec.layers.len(), header.layer_dims.len()),
            ));
        }
        let mut layers = Vec::with_capacity(rec.layers.len());
        for (l, layer) in rec.layers.into_iter().enumerate() {
            if checked {
                let j = header.layer_dims.get(l).copied().unwrap_or(0);
                for (name, v) in [("first", &layer.first), ("last", &layer.last), ("mean", &layer.mean)] {
                    if v.len() != j {
                        return Err(NaitError::format(
                            Some(idx),
                            format!("layer {l} {name} has {} values, header declares {j}", v.len()),
                        ));
                    }
                }
            }
            layers.push(LayerActivation::new(
                l,
                narrow(layer.first, idx, &format!("layer {l} first"))?,
                narrow(layer.last, idx, &format!("layer {l} last"))?,
                narrow(layer.mean, idx, &format!("layer {l} mean"))?,
            ));
        }
        traces.push(ActivationTrace::new(rec.sample_id, rec.token_count, layers));
    }
    Ok(TraceSet {
        source_label: header.source_label,
        layer_dims: header.layer_dims,
        traces,
    })
}
