//! One pass over a graph's symbol lattice.
//!
//! [`walk`] visits every symbol of a graph in the fixed coding order —
//! latents, adjacency, optional node-order digits, then node and relation
//! data — computing each symbol's model from the already-visited prefix.
//! The same walk drives three sinks: [`EncodeSink`] feeds an entropy coder
//! per stream, [`DecodeSink`] reads symbols back, and [`ProbeSink`] only
//! accumulates code lengths. Keeping one code path for all three is what
//! guarantees the decoder sees byte-identical models.

use std::collections::HashMap;

use thiserror::Error;

use crate::coder::{CompressionOrder, CoderError, Frame, RansDecoder, RansEncoder, StreamId, N_SLOTS};
use crate::diff::Tensor;
use crate::edge_graph::edge_adjacency;
use crate::entropy::DiscretePmf;
use crate::graph::{AdjacencyMatrix, ObjectNode, RelationEdge, SceneGraph};

use super::config::ModelConfig;
use super::features::{
    coord_range, coord_scale, edge_features, endpoint_features, node_feature_row, node_features,
    EdgeData,
};
use super::forward::{
    continuous_pmf, latent_pmf, loc_static_theta, node_forward, node_masks, prior_decode,
    prior_encode, structure_embeds, structure_logit, weight_static_theta, NodeMasks,
};
use super::params::Model;
use super::schedule::structure_schedule;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error("adjacency decodes to {got} edges but the header says {want}")]
    EdgeCount { got: usize, want: usize },
}

/// Resolves one symbol against a stream. Encoders write `truth` and return
/// it; decoders ignore `truth` and read; estimators account bits only.
pub trait SymbolSink {
    fn symbol(
        &mut self,
        stream: StreamId,
        pmf: &DiscretePmf,
        truth: Option<i64>,
    ) -> Result<i64, CoderError>;
}

/// Sink that entropy-codes every symbol, one coder per stream.
#[derive(Default)]
pub struct EncodeSink {
    coders: [RansEncoder; N_SLOTS],
}

impl EncodeSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Information content of everything coded so far, in bits per stream.
    pub fn ideal_bits(&self) -> [f64; N_SLOTS] {
        std::array::from_fn(|s| self.coders[s].ideal_bits())
    }

    /// Finalises all streams. Streams that never coded a symbol come back
    /// empty rather than as a bare coder terminator.
    pub fn finish(self) -> [Vec<u8>; N_SLOTS] {
        self.coders.map(|c| if c.symbols() == 0 { Vec::new() } else { c.finish() })
    }
}

impl SymbolSink for EncodeSink {
    fn symbol(
        &mut self,
        stream: StreamId,
        pmf: &DiscretePmf,
        truth: Option<i64>,
    ) -> Result<i64, CoderError> {
        let sym = truth.expect("encoding requires the true symbol");
        self.coders[stream as usize].put(sym, pmf);
        Ok(sym)
    }
}

/// Sink that reads symbols back out of a frame's streams.
pub struct DecodeSink<'a> {
    streams: [&'a [u8]; N_SLOTS],
    decoders: [Option<RansDecoder<'a>>; N_SLOTS],
}

impl<'a> DecodeSink<'a> {
    pub fn new(frame: &'a Frame) -> Self {
        let mut streams: [&[u8]; N_SLOTS] = [&[]; N_SLOTS];
        for (s, bytes) in frame.streams.iter().enumerate() {
            streams[s] = bytes;
        }
        streams[StreamId::Perm as usize] = &frame.perm_stream;
        DecodeSink { streams, decoders: std::array::from_fn(|_| None) }
    }

    /// Verifies that every stream was consumed exactly: initialised coders
    /// must land on their terminal state with no bytes left over, and
    /// non-empty streams must all have been read.
    pub fn finish(self) -> Result<(), CoderError> {
        for (slot, dec) in self.decoders.into_iter().enumerate() {
            match dec {
                Some(d) => d.finish()?,
                None if !self.streams[slot].is_empty() => {
                    return Err(CoderError::Corrupt("unread stream bytes"));
                }
                None => {}
            }
        }
        Ok(())
    }
}

impl SymbolSink for DecodeSink<'_> {
    fn symbol(
        &mut self,
        stream: StreamId,
        pmf: &DiscretePmf,
        _truth: Option<i64>,
    ) -> Result<i64, CoderError> {
        let slot = stream as usize;
        if self.decoders[slot].is_none() {
            if self.streams[slot].is_empty() {
                return Err(CoderError::Corrupt("stream missing from frame"));
            }
            self.decoders[slot] = Some(RansDecoder::new(self.streams[slot])?);
        }
        self.decoders[slot].as_mut().unwrap().get(pmf)
    }
}

/// One resolved symbol as seen by a [`ProbeSink`] with logging enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub stream: StreamId,
    pub index: usize,
    pub pmf: DiscretePmf,
    pub symbol: i64,
}

/// Sink that resolves symbols without touching any stream: each symbol
/// takes its true value unless overridden, falling back to the model's
/// mode when no truth exists. Accumulates exact quantised code lengths.
#[derive(Default)]
pub struct ProbeSink {
    counts: [usize; N_SLOTS],
    bits: [f64; N_SLOTS],
    overrides: HashMap<(usize, usize), i64>,
    log: Option<Vec<ProbeRecord>>,
}

impl ProbeSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log() -> Self {
        ProbeSink { log: Some(Vec::new()), ..Self::default() }
    }

    /// Forces symbol `index` of `stream` to `value` instead of its true
    /// value, as if the upstream data had differed at that point.
    pub fn override_symbol(&mut self, stream: StreamId, index: usize, value: i64) {
        self.overrides.insert((stream as usize, index), value);
    }

    pub fn bits(&self, stream: StreamId) -> f64 {
        self.bits[stream as usize]
    }

    pub fn count(&self, stream: StreamId) -> usize {
        self.counts[stream as usize]
    }

    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn records(&self) -> &[ProbeRecord] {
        self.log.as_deref().unwrap_or(&[])
    }
}

impl SymbolSink for ProbeSink {
    fn symbol(
        &mut self,
        stream: StreamId,
        pmf: &DiscretePmf,
        truth: Option<i64>,
    ) -> Result<i64, CoderError> {
        let slot = stream as usize;
        let index = self.counts[slot];
        self.counts[slot] += 1;
        let sym = match self.overrides.get(&(slot, index)) {
            Some(&v) => v,
            None => truth.unwrap_or_else(|| pmf.argmax()),
        }
        .clamp(pmf.lo(), pmf.hi());
        self.bits[slot] += pmf.bits(sym);
        if let Some(log) = &mut self.log {
            log.push(ProbeRecord { stream, index, pmf: pmf.clone(), symbol: sym });
        }
        Ok(sym)
    }
}

/// Everything a completed walk reconstructs.
pub struct WalkOutcome {
    pub graph: SceneGraph,
    /// Node-order digits decoded from the order stream, present only when
    /// the walk carried one.
    pub perm: Option<Vec<usize>>,
}

/// Walks every symbol of one graph in coding order. `truth` drives
/// encoding and estimation; decoding passes `None` and reconstructs the
/// graph from the sink. `perm` is the original-order permutation to code
/// when `keep_order` is set.
pub fn walk<S: SymbolSink>(
    model: &Model,
    sink: &mut S,
    width: u16,
    height: u16,
    n: usize,
    e: usize,
    truth: Option<&SceneGraph>,
    keep_order: bool,
    perm: Option<&[usize]>,
) -> Result<WalkOutcome, WalkError> {
    let cfg = &model.config;
    let params = &model.params;

    // Latents: one static model per channel, nodes in index order.
    let latent_truth = truth.map(|g| {
        let x = node_features(cfg, g);
        let y = prior_encode(params, &x);
        let (lo, hi) = cfg.latent_range();
        y.map(|v| v.round().clamp(lo as f64, hi as f64))
    });
    let channel_pmfs: Vec<DiscretePmf> =
        (0..cfg.latent_ch).map(|c| latent_pmf(cfg, params, c)).collect();
    let mut y_hat = Tensor::zeros(n, cfg.latent_ch);
    for d in 0..n {
        for c in 0..cfg.latent_ch {
            let t = latent_truth.as_ref().map(|y| y.get(d, c) as i64);
            let sym = sink.symbol(StreamId::Prior, &channel_pmfs[c], t)?;
            y_hat.set(d, c, sym as f64);
        }
    }
    let x_hat = prior_decode(params, &y_hat);

    // Adjacency, entry by entry; every decoded entry conditions the next.
    let truth_adj = truth.map(AdjacencyMatrix::from_graph);
    let emb = structure_embeds(params, &x_hat);
    let mut adj = AdjacencyMatrix::zero(n);
    for (r, c) in structure_schedule(n, cfg.directed) {
        let logit = structure_logit(cfg, params, &emb, &adj, r, c);
        let pmf = DiscretePmf::bernoulli(1.0 / (1.0 + (-logit).exp()));
        let t = truth_adj.as_ref().map(|a| a.get(r, c) as i64);
        if sink.symbol(StreamId::Structure, &pmf, t)? == 1 {
            adj.set(r, c, true);
            if !cfg.directed {
                adj.set(c, r, true);
            }
        }
    }
    let endpoints = adjacency_edges(&adj, cfg.directed);
    if truth.is_none() && endpoints.len() != e {
        return Err(WalkError::EdgeCount { got: endpoints.len(), want: e });
    }

    // Original node order, as digits of a shrinking-base index.
    let perm_out = if keep_order {
        let digits_in = perm.map(lehmer_digits);
        let mut digits = Vec::with_capacity(n);
        for i in 0..n {
            let base = n - i;
            if base < 2 {
                digits.push(0);
                continue;
            }
            let pmf = DiscretePmf::uniform(0, base).expect("base >= 2");
            let t = digits_in.as_ref().map(|d| d[i] as i64);
            digits.push(sink.symbol(StreamId::Perm, &pmf, t)? as usize);
        }
        Some(lehmer_decode(&digits))
    } else {
        None
    };

    let truth_edges: Option<HashMap<(usize, usize), (u16, Option<u8>)>> = truth.map(|g| {
        g.edges.iter().map(|ed| ((ed.src, ed.dst), (ed.rel_id, ed.weight))).collect()
    });

    let (nodes, edges) = match cfg.order {
        CompressionOrder::NodeFirst => {
            let masks = node_masks(cfg, &adj, None);
            let nodes =
                data_nodes(model, sink, &masks, &x_hat, width, height, truth.map(|g| &g.nodes[..]))?;
            let v = decoded_node_features(cfg, &nodes, width, height);
            let true_pairs = endpoint_features(&v, &endpoints);
            let edges = data_edges(
                model,
                sink,
                &endpoints,
                &v,
                &x_hat,
                Some(&true_pairs),
                truth_edges.as_ref(),
            )?;
            (nodes, edges)
        }
        CompressionOrder::EdgeFirst => {
            let edges =
                data_edges(model, sink, &endpoints, &x_hat, &x_hat, None, truth_edges.as_ref())?;
            let rel_by_pair: HashMap<(usize, usize), usize> =
                edges.iter().map(|ed| ((ed.src, ed.dst), ed.rel_id as usize)).collect();
            let rel_of = |s: usize, d: usize| {
                let key = if cfg.directed || s < d { (s, d) } else { (d, s) };
                rel_by_pair[&key]
            };
            let masks = node_masks(cfg, &adj, Some(&rel_of));
            let nodes =
                data_nodes(model, sink, &masks, &x_hat, width, height, truth.map(|g| &g.nodes[..]))?;
            (nodes, edges)
        }
        CompressionOrder::Parallel => {
            let masks = node_masks(cfg, &adj, None);
            let nodes =
                data_nodes(model, sink, &masks, &x_hat, width, height, truth.map(|g| &g.nodes[..]))?;
            let edges =
                data_edges(model, sink, &endpoints, &x_hat, &x_hat, None, truth_edges.as_ref())?;
            (nodes, edges)
        }
    };

    let graph = SceneGraph { width, height, directed: cfg.directed, nodes, edges };
    Ok(WalkOutcome { graph, perm: perm_out })
}

/// Edge endpoint list implied by an adjacency matrix, in canonical order.
fn adjacency_edges(adj: &AdjacencyMatrix, directed: bool) -> Vec<(usize, usize)> {
    let n = adj.n();
    let mut out = Vec::new();
    for s in 0..n {
        let lo = if directed { 0 } else { s + 1 };
        for d in lo..n {
            if d != s && adj.get(s, d) {
                out.push((s, d));
            }
        }
    }
    out
}

fn decoded_node_features(cfg: &ModelConfig, nodes: &[ObjectNode], width: u16, height: u16) -> Tensor {
    let mut v = Tensor::zeros(nodes.len(), cfg.feat());
    for (i, node) in nodes.iter().enumerate() {
        v.row_slice_mut(i)
            .copy_from_slice(&node_feature_row(cfg, node.type_id, node.bbox, width, height));
    }
    v
}

fn data_nodes<S: SymbolSink>(
    model: &Model,
    sink: &mut S,
    masks: &NodeMasks,
    x_hat: &Tensor,
    width: u16,
    height: u16,
    truth: Option<&[ObjectNode]>,
) -> Result<Vec<ObjectNode>, WalkError> {
    let cfg = &model.config;
    let n = x_hat.rows();
    let p_len = cfg.dist.omega_len();
    let mut decoded = Tensor::zeros(n, cfg.feat());
    let mut nodes = Vec::with_capacity(n);
    for d in 0..n {
        let out = node_forward(cfg, &model.params, masks, &decoded, x_hat);
        let type_pmf = DiscretePmf::categorical(out.type_logits.row_slice(d))
            .expect("finite logits always quantise");
        let t_type = truth.map(|ns| ns[d].type_id as i64);
        let type_id = sink.symbol(StreamId::NodeType, &type_pmf, t_type)? as u16;

        let mut bbox = [0u16; 4];
        for coord in 0..4 {
            let omega = &out.omega.row_slice(d)[coord * p_len..(coord + 1) * p_len];
            let (lo, mut hi) = coord_range(width, height, coord);
            // Box extent never reaches past the image once its origin is
            // known, so the model only spreads mass over what remains.
            if coord == 2 {
                hi = i64::from(width) - i64::from(bbox[0]);
            } else if coord == 3 {
                hi = i64::from(height) - i64::from(bbox[1]);
            }
            let pmf = continuous_pmf(
                cfg,
                omega,
                loc_static_theta(cfg, &model.params, coord),
                coord_scale(width, height, coord),
                lo,
                hi,
            );
            let t = truth.map(|ns| ns[d].bbox[coord] as i64);
            bbox[coord] = sink.symbol(StreamId::NodeLoc, &pmf, t)? as u16;
        }

        let node = ObjectNode { type_id, bbox };
        decoded
            .row_slice_mut(d)
            .copy_from_slice(&node_feature_row(cfg, node.type_id, node.bbox, width, height));
        nodes.push(node);
    }
    Ok(nodes)
}

fn data_edges<S: SymbolSink>(
    model: &Model,
    sink: &mut S,
    endpoints: &[(usize, usize)],
    v: &Tensor,
    x_hat: &Tensor,
    true_pairs: Option<&Tensor>,
    truth: Option<&HashMap<(usize, usize), (u16, Option<u8>)>>,
) -> Result<Vec<RelationEdge>, WalkError> {
    let cfg = &model.config;
    let e_norm = crate::diff::gcc_norm(&crate::diff::causal_mask(&edge_adjacency(endpoints)));
    let prior_pairs = endpoint_features(x_hat, endpoints);
    let mut data: Vec<Option<EdgeData>> = vec![None; endpoints.len()];
    for (k, &(src, dst)) in endpoints.iter().enumerate() {
        let d_edges = edge_features(cfg, v, endpoints, &data);
        let out = super::forward::edge_forward(cfg, &model.params, &e_norm, &d_edges, &prior_pairs, true_pairs);

        let rel_pmf = DiscretePmf::categorical(out.rel_logits.row_slice(k))
            .expect("finite logits always quantise");
        let known = truth.map(|m| m.get(&(src, dst)));
        let t_rel = known.and_then(|kv| kv.map(|&(r, _)| r as i64));
        let rel_id = sink.symbol(StreamId::RelType, &rel_pmf, t_rel)? as u16;

        let weight = if cfg.has_weights {
            let omega = out.weight_omega.as_ref().expect("weight head present").row_slice(k);
            let pmf = continuous_pmf(cfg, omega, weight_static_theta(cfg, &model.params), 256, 0, 255);
            let t_w = known.and_then(|kv| kv.and_then(|&(_, w)| w.map(i64::from)));
            Some(sink.symbol(StreamId::RelWeight, &pmf, t_w)? as u8)
        } else {
            None
        };

        data[k] = Some(EdgeData { rel: rel_id, weight });
    }
    Ok(endpoints
        .iter()
        .zip(data)
        .map(|(&(src, dst), d)| {
            let d = d.expect("every edge decoded");
            RelationEdge { src, dst, rel_id: d.rel, weight: d.weight }
        })
        .collect())
}

/// Factorial-base digits of a permutation: digit `i` is the rank of
/// `perm[i]` among the values not yet consumed.
pub fn lehmer_digits(perm: &[usize]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..perm.len()).collect();
    perm.iter()
        .map(|&p| {
            let pos = remaining.iter().position(|&r| r == p).expect("valid permutation");
            remaining.remove(pos);
            pos
        })
        .collect()
}

/// Inverse of [`lehmer_digits`].
pub fn lehmer_decode(digits: &[usize]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..digits.len()).collect();
    digits.iter().map(|&d| remaining.remove(d)).collect()
}
