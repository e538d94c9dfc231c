//! Byte-level container for one compressed scene graph.
//!
//! A frame starts with a fixed header (magic, version, flags, node and
//! edge counts, image size, per-stream byte lengths) followed by the
//! entropy-coded streams. Stream payloads are stored in a fixed canonical
//! order so the header fully determines every stream's position.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SGZ1";
pub const CONTAINER_VERSION: u8 = 1;

/// Which element group is coded first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressionOrder {
    /// All node data, then all relation data.
    NodeFirst,
    /// All relation data, then all node data.
    EdgeFirst,
    /// Node and relation data conditioned only on the shared prior.
    Parallel,
}

impl CompressionOrder {
    pub fn flag_bits(self) -> u8 {
        match self {
            CompressionOrder::NodeFirst => 0,
            CompressionOrder::EdgeFirst => 1,
            CompressionOrder::Parallel => 2,
        }
    }

    pub fn from_flag_bits(bits: u8) -> Option<Self> {
        match bits {
            0 => Some(CompressionOrder::NodeFirst),
            1 => Some(CompressionOrder::EdgeFirst),
            2 => Some(CompressionOrder::Parallel),
            _ => None,
        }
    }
}

impl std::fmt::Display for CompressionOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CompressionOrder::NodeFirst => "node-first",
            CompressionOrder::EdgeFirst => "edge-first",
            CompressionOrder::Parallel => "parallel",
        })
    }
}

impl std::str::FromStr for CompressionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node-first" => Ok(CompressionOrder::NodeFirst),
            "edge-first" => Ok(CompressionOrder::EdgeFirst),
            "parallel" => Ok(CompressionOrder::Parallel),
            other => Err(format!("unknown order '{other}'")),
        }
    }
}

/// Canonical stream indices within a frame. The first [`N_STREAMS`] live in
/// the fixed header; the node-ordering stream is an optional trailer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Prior = 0,
    Structure = 1,
    NodeLoc = 2,
    NodeType = 3,
    RelType = 4,
    RelWeight = 5,
    Perm = 6,
}

pub const N_STREAMS: usize = 6;
/// Total coding slots, including the optional node-ordering stream.
pub const N_SLOTS: usize = 7;

pub const STREAM_NAMES: [&str; N_SLOTS] =
    ["prior", "structure", "node-loc", "node-type", "rel-type", "rel-weight", "node-order"];

const FLAG_DIRECTED: u8 = 1 << 0;
const FLAG_ORDER_MASK: u8 = 0b110;
const FLAG_HAS_WEIGHTS: u8 = 1 << 3;
const FLAG_KEEP_ORDER: u8 = 1 << 4;
const FLAG_KNOWN: u8 = FLAG_DIRECTED | FLAG_ORDER_MASK | FLAG_HAS_WEIGHTS | FLAG_KEEP_ORDER;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("not an SGZ1 stream")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u8),
    #[error("container truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("compression order flag {0} out of range")]
    BadOrder(u8),
}

/// One compressed scene graph, decomposed into header fields and entropy
/// streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub directed: bool,
    pub order: CompressionOrder,
    pub keep_order: bool,
    pub n: u32,
    pub e: u32,
    pub width: u16,
    pub height: u16,
    pub streams: [Vec<u8>; N_STREAMS],
    pub has_weights: bool,
    /// Entropy stream encoding the inverse of the preprocessing
    /// permutation; present only when `keep_order` is set.
    pub perm_stream: Vec<u8>,
}

impl Frame {
    pub fn header_len(keep_order: bool) -> usize {
        4 + 1 + 1 + 4 + 4 + 2 + 2 + 4 * N_STREAMS + if keep_order { 4 } else { 0 }
    }

    pub fn total_len(&self) -> usize {
        Self::header_len(self.keep_order)
            + self.streams.iter().map(Vec::len).sum::<usize>()
            + self.perm_stream.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(&MAGIC);
        out.push(CONTAINER_VERSION);
        let mut flags = self.order.flag_bits() << 1;
        if self.directed {
            flags |= FLAG_DIRECTED;
        }
        if self.has_weights {
            flags |= FLAG_HAS_WEIGHTS;
        }
        if self.keep_order {
            flags |= FLAG_KEEP_ORDER;
        }
        out.push(flags);
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.e.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        }
        if self.keep_order {
            out.extend_from_slice(&(self.perm_stream.len() as u32).to_le_bytes());
        }
        for s in &self.streams {
            out.extend_from_slice(s);
        }
        out.extend_from_slice(&self.perm_stream);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < 6 {
            return Err(if bytes.len() < 4 {
                FrameError::Truncated { need: Self::header_len(false), have: bytes.len() }
            } else if bytes[..4] != MAGIC {
                FrameError::BadMagic
            } else {
                FrameError::Truncated { need: Self::header_len(false), have: bytes.len() }
            });
        }
        if bytes[..4] != MAGIC {
            return Err(FrameError::BadMagic);
        }
        if bytes[4] != CONTAINER_VERSION {
            return Err(FrameError::BadVersion(bytes[4]));
        }
        let flags = bytes[5];
        if flags & !FLAG_KNOWN != 0 {
            return Err(FrameError::BadFlags(flags & !FLAG_KNOWN));
        }
        let order = CompressionOrder::from_flag_bits((flags & FLAG_ORDER_MASK) >> 1)
            .ok_or(FrameError::BadOrder((flags & FLAG_ORDER_MASK) >> 1))?;
        let keep_order = flags & FLAG_KEEP_ORDER != 0;
        let header = Self::header_len(keep_order);
        if bytes.len() < header {
            return Err(FrameError::Truncated { need: header, have: bytes.len() });
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let u16_at = |off: usize| u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap());
        let n = u32_at(6);
        let e = u32_at(10);
        let width = u16_at(14);
        let height = u16_at(16);
        let mut lens = [0usize; N_STREAMS];
        for (i, len) in lens.iter_mut().enumerate() {
            *len = u32_at(18 + 4 * i) as usize;
        }
        let perm_len = if keep_order { u32_at(18 + 4 * N_STREAMS) as usize } else { 0 };
        let need = header + lens.iter().sum::<usize>() + perm_len;
        if bytes.len() < need {
            return Err(FrameError::Truncated { need, have: bytes.len() });
        }
        let mut pos = header;
        let mut streams: [Vec<u8>; N_STREAMS] = Default::default();
        for (i, &len) in lens.iter().enumerate() {
            streams[i] = bytes[pos..pos + len].to_vec();
            pos += len;
        }
        let perm_stream = bytes[pos..pos + perm_len].to_vec();
        Ok(Self {
            directed: flags & FLAG_DIRECTED != 0,
            order,
            keep_order,
            n,
            e,
            width,
            height,
            streams,
            has_weights: flags & FLAG_HAS_WEIGHTS != 0,
            perm_stream,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frame() -> Frame {
        Frame {
            directed: true,
            order: CompressionOrder::EdgeFirst,
            keep_order: false,
            n: 7,
            e: 11,
            width: 256,
            height: 192,
            streams: [
                vec![1, 2, 3],
                vec![4],
                vec![],
                vec![5, 6],
                vec![7, 8, 9, 10],
                vec![],
            ],
            has_weights: false,
            perm_stream: vec![],
        }
    }

    #[test]
    fn roundtrip() {
        let frame = sample_frame();
        let bytes = frame.encode();
        assert_eq!(bytes.len(), frame.total_len());
        assert_eq!(Frame::decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn roundtrip_with_perm_stream() {
        let mut frame = sample_frame();
        frame.keep_order = true;
        frame.perm_stream = vec![42, 43, 44];
        frame.has_weights = true;
        frame.directed = false;
        frame.order = CompressionOrder::Parallel;
        let bytes = frame.encode();
        assert_eq!(Frame::decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert_eq!(Frame::decode(b"PK\x03\x04xxxxxxxxxxxx"), Err(FrameError::BadMagic));
        assert_eq!(Frame::decode(b"SGZ2aa"), Err(FrameError::BadMagic));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = sample_frame().encode();
        bytes[4] = 9;
        assert_eq!(Frame::decode(&bytes), Err(FrameError::BadVersion(9)));
    }

    #[test]
    fn rejects_unknown_flags() {
        let mut bytes = sample_frame().encode();
        bytes[5] |= 0x80;
        assert_eq!(Frame::decode(&bytes), Err(FrameError::BadFlags(0x80)));
    }

    #[test]
    fn rejects_bad_order() {
        let mut bytes = sample_frame().encode();
        bytes[5] = (bytes[5] & !FLAG_ORDER_MASK) | (3 << 1);
        assert_eq!(Frame::decode(&bytes), Err(FrameError::BadOrder(3)));
    }

    #[test]
    fn truncation_reports_needed_length() {
        let bytes = sample_frame().encode();
        let total = bytes.len();
        match Frame::decode(&bytes[..total - 2]) {
            Err(FrameError::Truncated { need, have }) => {
                assert_eq!(need, total);
                assert_eq!(have, total - 2);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        match Frame::decode(&bytes[..10]) {
            Err(FrameError::Truncated { need, have }) => {
                assert_eq!(need, Frame::header_len(false));
                assert_eq!(have, 10);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn header_length() {
        assert_eq!(Frame::header_len(false), 42);
        assert_eq!(Frame::header_len(true), 46);
    }

    #[test]
    fn order_flag_roundtrip() {
        for order in
            [CompressionOrder::NodeFirst, CompressionOrder::EdgeFirst, CompressionOrder::Parallel]
        {
            assert_eq!(CompressionOrder::from_flag_bits(order.flag_bits()), Some(order));
            assert_eq!(order.to_string().parse::<CompressionOrder>().unwrap(), order);
        }
        assert!("sideways".parse::<CompressionOrder>().is_err());
    }
}
