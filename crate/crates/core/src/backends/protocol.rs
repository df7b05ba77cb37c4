//! Framed wire format shared by process and socket adapters.
//!
//! ```text
//! u32 LE header length | header (UTF-8 JSON) | u32 LE payload length | payload
//! ```
//!
//! The payload is little-endian `f32`: `num_samples` audio samples followed by
//! `dim` vector elements when `dim` is present.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BackendRole;

/// Upper bound on header size; anything larger is treated as garbage.
pub const MAX_HEADER_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("truncated frame: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload length {actual} bytes does not match declared {declared} bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("header declares {declared} elements but payload holds {actual}")]
    ElementCount { declared: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameHeader {
    pub role: BackendRole,
    pub op: String,
    pub sample_rate: u32,
    pub num_samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<serde_json::Value>,
}

impl FrameHeader {
    pub fn new(role: BackendRole, op: impl Into<String>) -> Self {
        Self {
            role,
            op: op.into(),
            sample_rate: 0,
            num_samples: 0,
            dim: None,
            aux: None,
        }
    }

    pub fn element_count(&self) -> usize {
        (self.num_samples + self.dim.unwrap_or(0)) as usize
    }

    pub fn aux_field(&self, key: &str) -> Option<&serde_json::Value> {
        self.aux.as_ref().and_then(|a| a.get(key))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterFrame {
    pub header: FrameHeader,
    pub payload: Vec<f32>,
}

impl AdapterFrame {
    pub fn new(header: FrameHeader, payload: Vec<f32>) -> Self {
        Self { header, payload }
    }

    /// The leading `num_samples` elements.
    pub fn samples(&self) -> &[f32] {
        let n = (self.header.num_samples as usize).min(self.payload.len());
        &self.payload[..n]
    }

    /// The trailing `dim` elements.
    pub fn vector(&self) -> &[f32] {
        let n = (self.header.num_samples as usize).min(self.payload.len());
        &self.payload[n..]
    }
}

pub fn encode_frame(header: &FrameHeader, payload: &[f32]) -> Result<Vec<u8>, ProtocolError> {
    if header.element_count() != payload.len() {
        return Err(ProtocolError::ElementCount {
            declared: header.element_count(),
            actual: payload.len(),
        });
    }
    let head = serde_json::to_vec(header).map_err(|e| ProtocolError::MalformedHeader(e.to_string()))?;
    let body_len = payload.len() * 4;
    let mut out = Vec::with_capacity(8 + head.len() + body_len);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize) -> Result<&'a [u8], ProtocolError> {
    bytes.get(at..at + len).ok_or(ProtocolError::Truncated {
        needed: at + len,
        available: bytes.len(),
    })
}

fn parse_header(head: &[u8]) -> Result<FrameHeader, ProtocolError> {
    serde_json::from_slice(head).map_err(|e| ProtocolError::MalformedHeader(e.to_string()))
}

fn parse_payload(header: &FrameHeader, body: &[u8]) -> Result<Vec<f32>, ProtocolError> {
    if body.len() % 4 != 0 || body.len() / 4 != header.element_count() {
        return Err(ProtocolError::LengthMismatch {
            declared: header.element_count() * 4,
            actual: body.len(),
        });
    }
    Ok(body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<AdapterFrame, ProtocolError> {
    let head_len = u32::from_le_bytes(take(bytes, 0, 4)?.try_into().unwrap()) as usize;
    if head_len > MAX_HEADER_BYTES {
        return Err(ProtocolError::MalformedHeader(format!(
            "header length {head_len} exceeds {MAX_HEADER_BYTES}"
        )));
    }
    let head = take(bytes, 4, head_len)?;
    let body_len = u32::from_le_bytes(take(bytes, 4 + head_len, 4)?.try_into().unwrap()) as usize;
    let body = take(bytes, 8 + head_len, body_len)?;
    let trailing = bytes.len() - (8 + head_len + body_len);
    if trailing != 0 {
        return Err(ProtocolError::LengthMismatch {
            declared: body_len,
            actual: body_len + trailing,
        });
    }
    let header = parse_header(head)?;
    let payload = parse_payload(&header, body)?;
    Ok(AdapterFrame { header, payload })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &AdapterFrame) -> Result<(), ProtocolError> {
    let bytes = encode_frame(&frame.header, &frame.payload)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: usize,
) -> Result<(), ProtocolError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(ProtocolError::Truncated {
                    needed: offset + buf.len(),
                    available: offset + filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Reads one frame from a stream. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<AdapterFrame>, ProtocolError> {
    let mut len = [0u8; 4];
    let first = loop {
        match r.read(&mut len) {
            Ok(n) => break n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    };
    if first == 0 {
        return Ok(None);
    }
    read_exact_or_truncated(r, &mut len[first..], first)?;
    let head_len = u32::from_le_bytes(len) as usize;
    if head_len > MAX_HEADER_BYTES {
        return Err(ProtocolError::MalformedHeader(format!(
            "header length {head_len} exceeds {MAX_HEADER_BYTES}"
        )));
    }
    let mut head = vec![0u8; head_len];
    read_exact_or_truncated(r, &mut head, 4)?;
    read_exact_or_truncated(r, &mut len, 4 + head_len)?;
    let body_len = u32::from_le_bytes(len) as usize;
    let header = parse_header(&head)?;
    if body_len != header.element_count() * 4 {
        return Err(ProtocolError::LengthMismatch {
            declared: header.element_count() * 4,
            actual: body_len,
        });
    }
    let mut body = vec![0u8; body_len];
    read_exact_or_truncated(r, &mut body, 8 + head_len)?;
    let payload = parse_payload(&header, &body)?;
    Ok(Some(AdapterFrame { header, payload }))
}
