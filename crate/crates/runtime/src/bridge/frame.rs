//! Wire format: 4-byte big-endian length, then a UTF-8 JSON envelope
//! `{"topic": string, "stamp_ns": int, "payload": object}`.

use std::io::{self, Read, Write};

use serde::Deserialize;
use serde_json::value::RawValue;

use super::BridgeError;

/// Frames larger than this are treated as a protocol error.
pub const MAX_FRAME_LEN: usize = 16 << 20;

#[derive(Debug, Deserialize)]
pub struct Envelope<'a> {
    pub topic: String,
    pub stamp_ns: i64,
    #[serde(borrow)]
    pub payload: &'a RawValue,
}

/// Serializes an envelope around an already-encoded JSON payload.
pub fn envelope(topic: &str, stamp_ns: i64, payload: &[u8]) -> Vec<u8> {
    let topic = serde_json::to_string(topic).expect("strings always serialize");
    let mut out = Vec::with_capacity(payload.len() + topic.len() + 48);
    out.extend_from_slice(b"{\"topic\":");
    out.extend_from_slice(topic.as_bytes());
    out.extend_from_slice(b",\"stamp_ns\":");
    out.extend_from_slice(stamp_ns.to_string().as_bytes());
    out.extend_from_slice(b",\"payload\":");
    out.extend_from_slice(payload);
    out.push(b'}');
    out
}

pub fn parse_envelope(body: &[u8]) -> Result<Envelope<'_>, BridgeError> {
    serde_json::from_slice(body).map_err(|e| BridgeError::Frame(e.to_string()))
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
