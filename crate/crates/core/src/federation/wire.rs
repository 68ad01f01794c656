//! Frame codec.
//!
//! A frame is `[u32 big-endian length][u8 tag][JSON payload]`, where the
//! length counts the tag byte plus the payload. Payload keys appear in
//! declaration order and reals use shortest round-trip formatting.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::Matrix;

pub const TAG_HELLO: u8 = 0;
pub const TAG_PROPOSAL_BATCH: u8 = 1;
pub const TAG_DISCREPANCY_REPORT: u8 = 2;
pub const TAG_TERMINATE: u8 = 3;

/// Frames above this size are refused before allocation.
pub const MAX_FRAME_LEN: usize = 256 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub site_id: u32,
    pub n_j: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalBatch {
    pub iteration: u64,
    pub rows: Vec<Vec<f64>>,
}

impl ProposalBatch {
    pub fn from_matrix(iteration: u64, m: &Matrix) -> Self {
        Self {
            iteration,
            rows: m.to_rows(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Iteration id and one scalar per paired row; nothing else can be carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyReport {
    pub iteration: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Terminate {}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello(Hello),
    ProposalBatch(ProposalBatch),
    DiscrepancyReport(DiscrepancyReport),
    Terminate,
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::Hello(_) => TAG_HELLO,
            WireMessage::ProposalBatch(_) => TAG_PROPOSAL_BATCH,
            WireMessage::DiscrepancyReport(_) => TAG_DISCREPANCY_REPORT,
            WireMessage::Terminate => TAG_TERMINATE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Hello(_) => "Hello",
            WireMessage::ProposalBatch(_) => "ProposalBatch",
            WireMessage::DiscrepancyReport(_) => "DiscrepancyReport",
            WireMessage::Terminate => "Terminate",
        }
    }

    fn payload(&self) -> Result<Vec<u8>> {
        Ok(match self {
            WireMessage::Hello(m) => serde_json::to_vec(m)?,
            WireMessage::ProposalBatch(m) => serde_json::to_vec(m)?,
            WireMessage::DiscrepancyReport(m) => serde_json::to_vec(m)?,
            WireMessage::Terminate => serde_json::to_vec(&Terminate {})?,
        })
    }
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>> {
    let payload = msg.payload()?;
    let len = u32::try_from(payload.len() + 1)
        .ok()
        .filter(|&l| l as usize <= MAX_FRAME_LEN)
        .ok_or_else(|| Error::Protocol(format!("{} frame too large", msg.name())))?;
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.extend_from_slice(&len.to_be_bytes());
    out.push(msg.tag());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn bad_payload(tag: u8, e: serde_json::Error) -> Error {
    Error::Protocol(format!("malformed payload for tag {tag}: {e}"))
}

/// Decodes a tag and payload (the frame body after the length prefix).
pub fn decode_body(tag: u8, payload: &[u8]) -> Result<WireMessage> {
    match tag {
        TAG_HELLO => serde_json::from_slice(payload).map(WireMessage::Hello),
        TAG_PROPOSAL_BATCH => serde_json::from_slice(payload).map(WireMessage::ProposalBatch),
        TAG_DISCREPANCY_REPORT => serde_json::from_slice(payload).map(WireMessage::DiscrepancyReport),
        TAG_TERMINATE => serde_json::from_slice::<Terminate>(payload).map(|_| WireMessage::Terminate),
        t => return Err(Error::Protocol(format!("unknown frame tag {t}"))),
    }
    .map_err(|e| bad_payload(tag, e))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<WireMessage> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Protocol(format!("{} trailing bytes after frame", bytes.len() - used)));
    }
    Ok(msg)
}

/// Decodes the first frame of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(WireMessage, usize)> {
    if bytes.len() < 5 {
        return Err(Error::Protocol("truncated frame header".into()));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("invalid frame length {len}")));
    }
    if bytes.len() < 4 + len {
        return Err(Error::Protocol("truncated frame body".into()));
    }
    let msg = decode_body(bytes[4], &bytes[5..4 + len])?;
    Ok((msg, 4 + len))
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<()> {
    w.write_all(&encode_frame(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; a clean end of stream before the header is
/// `TransportClosed`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(WireMessage, Vec<u8>)> {
    let mut header = [0u8; 4];
    if let Err(e) = r.read_exact(&mut header) {
        return Err(Error::TransportClosed(e.to_string()));
    }
    let len = u32::from_be_bytes(header) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("invalid frame length {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|e| Error::TransportClosed(e.to_string()))?;
    let msg = decode_body(body[0], &body[1..])?;
    let mut raw = header.to_vec();
    raw.extend_from_slice(&body);
    Ok((msg, raw))
}

/// The only frames a site may emit.
#[derive(Debug, Clone, PartialEq)]
pub enum SiteFrame {
    Hello(Hello),
    DiscrepancyReport(DiscrepancyReport),
}

/// Parses a captured site-to-coordinator byte stream, failing on any frame
/// outside the site grammar, on unknown payload fields and on trailing bytes.
pub fn parse_site_traffic(mut bytes: &[u8]) -> Result<Vec<SiteFrame>> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        let (msg, used) = decode_prefix(bytes)?;
        frames.push(match msg {
            WireMessage::Hello(h) => SiteFrame::Hello(h),
            WireMessage::DiscrepancyReport(r) => SiteFrame::DiscrepancyReport(r),
            other => {
                return Err(Error::Protocol(format!(
                    "site emitted a {} frame",
                    other.name()
                )))
            }
        });
        bytes = &bytes[used..];
    }
    Ok(frames)
}
