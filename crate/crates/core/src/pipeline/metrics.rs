//! Size accounting for compressed graphs.

use serde::Serialize;

use crate::coder::{Frame, N_SLOTS, N_STREAMS};
use crate::graph::{raw_size_bits, SceneGraph};

/// Bit accounting for one compressed graph. The header and the per-stream
/// payloads always sum to `total_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphMetrics {
    pub raw_bits: u64,
    pub total_bits: u64,
    pub header_bits: u64,
    pub stream_bits: [u64; N_SLOTS],
    /// `total_bits / raw_bits`; smaller is better.
    pub ratio: f64,
    /// Structure-stream bits divided by the node count.
    pub bits_per_node: f64,
    /// Causal-edge count after reordering over the count before.
    pub cir: f64,
}

pub fn measure(frame: &Frame, original: &SceneGraph, cir: f64) -> GraphMetrics {
    let stream_bits: [u64; N_SLOTS] = std::array::from_fn(|s| {
        8 * if s < N_STREAMS { frame.streams[s].len() as u64 } else { frame.perm_stream.len() as u64 }
    });
    let header_bits = Frame::header_len(frame.keep_order) as u64 * 8;
    let total_bits = frame.total_len() as u64 * 8;
    debug_assert_eq!(header_bits + stream_bits.iter().sum::<u64>(), total_bits);
    let raw_bits = raw_size_bits(original);
    GraphMetrics {
        raw_bits,
        total_bits,
        header_bits,
        stream_bits,
        ratio: total_bits as f64 / raw_bits as f64,
        bits_per_node: stream_bits[1] as f64 / (frame.n as f64).max(1.0),
        cir,
    }
}

/// Dataset-level totals and means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Aggregate {
    pub graphs: usize,
    pub raw_bits: u64,
    pub total_bits: u64,
    pub header_bits: u64,
    pub stream_bits: [u64; N_SLOTS],
    /// Mean of the per-graph ratios.
    pub mean_ratio: f64,
    /// Total compressed bits over total raw bits.
    pub pooled_ratio: f64,
    pub mean_bits_per_node: f64,
    pub mean_cir: f64,
    pub wall_secs: f64,
}

pub fn aggregate(rows: &[GraphMetrics], wall_secs: f64) -> Aggregate {
    let mut out = Aggregate { graphs: rows.len(), wall_secs, ..Default::default() };
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        out.raw_bits += r.raw_bits;
        out.total_bits += r.total_bits;
        out.header_bits += r.header_bits;
        for (acc, &b) in out.stream_bits.iter_mut().zip(&r.stream_bits) {
            *acc += b;
        }
        out.mean_ratio += r.ratio;
        out.mean_bits_per_node += r.bits_per_node;
        out.mean_cir += r.cir;
    }
    let k = rows.len() as f64;
    out.mean_ratio /= k;
    out.mean_bits_per_node /= k;
    out.mean_cir /= k;
    out.pooled_ratio = out.total_bits as f64 / out.raw_bits as f64;
    out
}
