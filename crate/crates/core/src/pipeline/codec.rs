//! The file-level codec: schema checks, node reordering, the symbol walk,
//! and framing.
//!
//! Compression reorders nodes first, so what a frame stores — and what
//! decompression reproduces — is the reordered graph. Passing `keep_order`
//! additionally spends an order stream on the permutation that restores
//! the caller's original node numbering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coder::{CoderError, Frame, FrameError, StreamId, N_SLOTS};
use crate::graph::{validate, AdjacencyMatrix, SceneGraph};
use crate::predictor::{walk, DecodeSink, EncodeSink, Model, ProbeSink, WalkError};
use crate::preprocess::{
    cir, degree_order, random_order, reorder, scc_topo_bruteforce, scc_topo_order, NodeOrdering,
    OrderingKind, PreprocessError, Ratio,
};

/// Node-reordering strategy applied before coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreprocMode {
    None,
    Random,
    Degree,
    Scc,
    SccBf10,
}

/// Component size limit for the brute-force refinement mode.
pub const BRUTE_FORCE_CAP: usize = 10;

impl std::fmt::Display for PreprocMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PreprocMode::None => "none",
            PreprocMode::Random => "random",
            PreprocMode::Degree => "degree",
            PreprocMode::Scc => "scc",
            PreprocMode::SccBf10 => "scc-bf10",
        })
    }
}

impl std::str::FromStr for PreprocMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(PreprocMode::None),
            "random" => Ok(PreprocMode::Random),
            "degree" => Ok(PreprocMode::Degree),
            "scc" => Ok(PreprocMode::Scc),
            "scc-bf10" => Ok(PreprocMode::SccBf10),
            other => Err(format!("unknown preprocessing mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub preproc: PreprocMode,
    pub keep_order: bool,
    /// Seed for the random preprocessing mode; unused otherwise.
    pub seed: u64,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions { preproc: PreprocMode::Scc, keep_order: false, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("graph does not fit the model: {0}")]
    InvalidGraph(String),
    #[error("stream does not match the model: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// One compressed graph plus the bookkeeping that evaluation reports on.
#[derive(Debug, Clone)]
pub struct Compressed {
    pub frame: Frame,
    pub bytes: Vec<u8>,
    pub ordering: NodeOrdering,
    pub cir: Ratio,
}

fn check_schema(model: &Model, g: &SceneGraph) -> Result<(), CodecError> {
    let cfg = &model.config;
    if let Some(v) = validate(g, cfg.t_o(), cfg.t_r()).into_iter().next() {
        return Err(CodecError::InvalidGraph(v.to_string()));
    }
    if g.directed != cfg.directed {
        return Err(CodecError::InvalidGraph(format!(
            "graph is {} but the model codes {} graphs",
            if g.directed { "directed" } else { "undirected" },
            if cfg.directed { "directed" } else { "undirected" },
        )));
    }
    if g.e() > 0 && g.has_weights() != cfg.has_weights {
        return Err(CodecError::InvalidGraph(format!(
            "graph edges are {} but the model codes {} edges",
            if g.has_weights() { "weighted" } else { "unweighted" },
            if cfg.has_weights { "weighted" } else { "unweighted" },
        )));
    }
    Ok(())
}

fn ordering_for(mode: PreprocMode, adj: &AdjacencyMatrix, seed: u64) -> NodeOrdering {
    match mode {
        PreprocMode::None => NodeOrdering::identity(adj.n()),
        PreprocMode::Random => random_order(adj.n(), seed),
        PreprocMode::Degree => degree_order(adj),
        PreprocMode::Scc => scc_topo_order(adj),
        PreprocMode::SccBf10 => scc_topo_bruteforce(adj, BRUTE_FORCE_CAP),
    }
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (p, &orig) in perm.iter().enumerate() {
        inv[orig] = p;
    }
    inv
}

/// Applies the configured reordering, returning the graph the coder will
/// actually walk plus the ordering that produced it.
pub fn preprocess_graph(
    g: &SceneGraph,
    opts: &CompressOptions,
) -> Result<(SceneGraph, NodeOrdering), CodecError> {
    let adj = AdjacencyMatrix::from_graph(g);
    let ordering = ordering_for(opts.preproc, &adj, opts.seed);
    let pre = reorder(g, &ordering)?;
    Ok((pre, ordering))
}

/// Compresses one graph to a self-contained frame.
pub fn compress_graph(
    model: &Model,
    g: &SceneGraph,
    opts: &CompressOptions,
) -> Result<Compressed, CodecError> {
    check_schema(model, g)?;
    let cfg = &model.config;
    let (pre, ordering) = preprocess_graph(g, opts)?;
    let cir = cir(&AdjacencyMatrix::from_graph(g), &AdjacencyMatrix::from_graph(&pre))?;

    let restore = invert(&ordering.perm);
    let mut sink = EncodeSink::new();
    walk(
        model,
        &mut sink,
        pre.width,
        pre.height,
        pre.n(),
        pre.e(),
        Some(&pre),
        opts.keep_order,
        opts.keep_order.then_some(restore.as_slice()),
    )?;
    let mut slots = sink.finish();

    let frame = Frame {
        directed: cfg.directed,
        order: cfg.order,
        keep_order: opts.keep_order,
        n: pre.n() as u32,
        e: pre.e() as u32,
        width: pre.width,
        height: pre.height,
        streams: std::array::from_fn(|s| std::mem::take(&mut slots[s])),
        has_weights: cfg.has_weights,
        perm_stream: std::mem::take(&mut slots[StreamId::Perm as usize]),
    };
    let bytes = frame.encode();
    Ok(Compressed { frame, bytes, ordering, cir })
}

/// Decodes a frame back into the graph it stored. With `keep_order` set
/// the original node numbering is restored from the order stream.
pub fn decompress_graph(model: &Model, bytes: &[u8]) -> Result<SceneGraph, CodecError> {
    let frame = Frame::decode(bytes)?;
    let cfg = &model.config;
    if frame.directed != cfg.directed {
        return Err(CodecError::ModelMismatch("directedness flag differs".into()));
    }
    if frame.has_weights != cfg.has_weights {
        return Err(CodecError::ModelMismatch("weight flag differs".into()));
    }
    if frame.order != cfg.order {
        return Err(CodecError::ModelMismatch(format!(
            "stream was coded {} but the model runs {}",
            frame.order, cfg.order
        )));
    }

    let mut sink = DecodeSink::new(&frame);
    let out = walk(
        model,
        &mut sink,
        frame.width,
        frame.height,
        frame.n as usize,
        frame.e as usize,
        None,
        frame.keep_order,
        None,
    )?;
    sink.finish()?;

    match out.perm {
        Some(p) => {
            let restore = NodeOrdering { perm: p, kind: OrderingKind::Identity };
            Ok(reorder(&out.graph, &restore)?)
        }
        None => Ok(out.graph),
    }
}

/// Entropy coders pay this much per non-empty stream to flush their state.
const STREAM_FLUSH_BITS: f64 = 32.0;

/// Predicted size of a compressed graph, stream by stream, without running
/// the entropy coder.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    /// Information content per stream, plus the flush cost for streams
    /// that will carry symbols.
    pub stream_bits: [f64; N_SLOTS],
    pub header_bits: u64,
}

impl Estimate {
    pub fn payload_bits(&self) -> f64 {
        self.stream_bits.iter().sum()
    }

    pub fn total_bits(&self) -> f64 {
        self.payload_bits() + self.header_bits as f64
    }
}

const ALL_STREAMS: [StreamId; N_SLOTS] = [
    StreamId::Prior,
    StreamId::Structure,
    StreamId::NodeLoc,
    StreamId::NodeType,
    StreamId::RelType,
    StreamId::RelWeight,
    StreamId::Perm,
];

/// Estimates compressed size by walking the graph through a counting sink,
/// mirroring [`compress_graph`]'s preprocessing.
pub fn estimate_graph(
    model: &Model,
    g: &SceneGraph,
    opts: &CompressOptions,
) -> Result<Estimate, CodecError> {
    check_schema(model, g)?;
    let (pre, ordering) = preprocess_graph(g, opts)?;
    let restore = invert(&ordering.perm);

    let mut sink = ProbeSink::new();
    walk(
        model,
        &mut sink,
        pre.width,
        pre.height,
        pre.n(),
        pre.e(),
        Some(&pre),
        opts.keep_order,
        opts.keep_order.then_some(restore.as_slice()),
    )?;

    let stream_bits = ALL_STREAMS.map(|s| {
        if sink.count(s) > 0 {
            sink.bits(s) + STREAM_FLUSH_BITS
        } else {
            0.0
        }
    });
    Ok(Estimate { stream_bits, header_bits: Frame::header_len(opts.keep_order) as u64 * 8 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ObjectNode, RelationEdge};
    use crate::pipeline::synth::{synth_dataset, SynthConfig};
    use crate::predictor::ModelConfig;

    fn setup(directed: bool, weighted: bool) -> (Model, Vec<SceneGraph>) {
        let mut scfg = SynthConfig::scene(16, 23);
        scfg.directed = directed;
        scfg.weighted = weighted;
        let ds = synth_dataset(&scfg).unwrap();
        let model = Model::init(ModelConfig::new(ds.vocab.clone(), directed, weighted), 5);
        (model, ds.graphs)
    }

    #[test]
    fn roundtrip_reproduces_the_reordered_graph() {
        let (model, graphs) = setup(true, false);
        for (i, g) in graphs.iter().enumerate() {
            let c = compress_graph(&model, g, &CompressOptions::default()).unwrap();
            let expect = reorder(g, &c.ordering).unwrap();
            let back = decompress_graph(&model, &c.bytes).unwrap();
            assert_eq!(back, expect, "graph {i}");
        }
    }

    #[test]
    fn keep_order_restores_the_original_numbering() {
        let (model, graphs) = setup(true, false);
        let opts = CompressOptions { keep_order: true, ..Default::default() };
        for (i, g) in graphs.iter().enumerate() {
            let c = compress_graph(&model, g, &opts).unwrap();
            let back = decompress_graph(&model, &c.bytes).unwrap();
            assert_eq!(&back, g, "graph {i}");
        }
    }

    #[test]
    fn undirected_and_weighted_files_roundtrip() {
        let (model, graphs) = setup(false, true);
        for g in graphs.iter().take(8) {
            let c = compress_graph(&model, g, &CompressOptions::default()).unwrap();
            let back = decompress_graph(&model, &c.bytes).unwrap();
            assert_eq!(back, reorder(g, &c.ordering).unwrap());
        }
    }

    #[test]
    fn every_preproc_mode_roundtrips() {
        let (model, graphs) = setup(true, false);
        for mode in [
            PreprocMode::None,
            PreprocMode::Random,
            PreprocMode::Degree,
            PreprocMode::Scc,
            PreprocMode::SccBf10,
        ] {
            let opts = CompressOptions { preproc: mode, seed: 99, ..Default::default() };
            let c = compress_graph(&model, &graphs[0], &opts).unwrap();
            let back = decompress_graph(&model, &c.bytes).unwrap();
            assert_eq!(back, reorder(&graphs[0], &c.ordering).unwrap(), "{mode}");
        }
    }

    #[test]
    fn compression_is_deterministic() {
        let (model, graphs) = setup(true, false);
        let opts = CompressOptions::default();
        let a = compress_graph(&model, &graphs[3], &opts).unwrap();
        let b = compress_graph(&model, &graphs[3], &opts).unwrap();
        assert_eq!(a.bytes, b.bytes);
    }

    #[test]
    fn empty_graph_compresses_to_a_bare_header() {
        let (model, _) = setup(true, false);
        let g = SceneGraph { width: 64, height: 64, directed: true, nodes: vec![], edges: vec![] };
        let c = compress_graph(&model, &g, &CompressOptions::default()).unwrap();
        assert_eq!(c.bytes.len(), Frame::header_len(false));
        assert_eq!(decompress_graph(&model, &c.bytes).unwrap(), g);
    }

    #[test]
    fn schema_violations_are_named() {
        let (model, mut graphs) = setup(true, false);
        graphs[0].nodes[0].type_id = 200;
        let err = compress_graph(&model, &graphs[0], &CompressOptions::default()).unwrap_err();
        assert!(matches!(err, CodecError::InvalidGraph(_)), "{err}");
        assert!(err.to_string().contains("type id 200"), "{err}");
    }

    #[test]
    fn directedness_mismatch_is_rejected_both_ways() {
        let (model, _) = setup(true, false);
        let g = SceneGraph {
            width: 32,
            height: 32,
            directed: false,
            nodes: vec![ObjectNode { type_id: 0, bbox: [0, 0, 4, 4] }],
            edges: vec![],
        };
        assert!(compress_graph(&model, &g, &CompressOptions::default()).is_err());

        let (undirected_model, graphs) = setup(false, false);
        let c = compress_graph(&undirected_model, &graphs[0], &CompressOptions::default()).unwrap();
        let err = decompress_graph(&model, &c.bytes).unwrap_err();
        assert!(matches!(err, CodecError::ModelMismatch(_)), "{err}");
    }

    #[test]
    fn mixed_weight_expectations_are_rejected() {
        let (model, _) = setup(true, false);
        let g = SceneGraph {
            width: 32,
            height: 32,
            directed: true,
            nodes: vec![
                ObjectNode { type_id: 0, bbox: [0, 0, 4, 4] },
                ObjectNode { type_id: 1, bbox: [8, 8, 4, 4] },
            ],
            edges: vec![RelationEdge { src: 0, dst: 1, rel_id: 0, weight: Some(9) }],
        };
        let err = compress_graph(&model, &g, &CompressOptions::default()).unwrap_err();
        assert!(err.to_string().contains("weighted"), "{err}");
    }

    #[test]
    fn truncation_anywhere_is_detected() {
        let (model, graphs) = setup(true, false);
        let c = compress_graph(&model, &graphs[1], &CompressOptions::default()).unwrap();
        for cut in [3, 10, Frame::header_len(false), c.bytes.len() - 1] {
            let err = decompress_graph(&model, &c.bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CodecError::Frame(_) | CodecError::Coder(_) | CodecError::Walk(_)),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn estimate_counts_every_stream_of_the_real_frame() {
        let (model, graphs) = setup(true, false);
        let opts = CompressOptions::default();
        for g in graphs.iter().take(6) {
            let est = estimate_graph(&model, g, &opts).unwrap();
            let c = compress_graph(&model, g, &opts).unwrap();
            let actual_payload =
                (c.bytes.len() - Frame::header_len(false)) as f64 * 8.0;
            let diff = (actual_payload - est.payload_bits()).abs();
            assert!(
                diff <= 8.0 * N_SLOTS as f64,
                "estimate {:.1} vs actual {actual_payload} bits",
                est.payload_bits()
            );
            assert_eq!(est.header_bits, Frame::header_len(false) as u64 * 8);
        }
    }
}
