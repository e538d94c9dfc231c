//! Scene-graph data model: object nodes, relation edges, adjacency views,
//! validation, JSON datasets and the canonical raw serialization that all
//! compression ratios are measured against.
//!
//! In-memory graphs keep their edge list sorted by `(src, dst)`; loaders
//! normalise input order, so two graphs with the same edge set compare equal
//! and serialize identically.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Nodes and edges are indexed with `u16` in the raw serialization.
pub const MAX_NODES: usize = 1 << 16;

/// An object node: a type id into the object vocabulary and a pixel-aligned
/// bounding box `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectNode {
    pub type_id: u16,
    pub bbox: [u16; 4],
}

/// A relation edge `src -> dst` with a relation type id and an optional
/// 8-bit weight. Undirected graphs store each edge once with `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationEdge {
    pub src: usize,
    pub dst: usize,
    pub rel_id: u16,
    pub weight: Option<u8>,
}

/// A single scene graph over an image of `width x height` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub width: u16,
    pub height: u16,
    pub directed: bool,
    pub nodes: Vec<ObjectNode>,
    pub edges: Vec<RelationEdge>,
}

/// Object and relation vocabularies shared by every graph in a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub objects: Vec<String>,
    pub relations: Vec<String>,
}

/// A set of scene graphs plus the vocabulary they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub graphs: Vec<SceneGraph>,
}

/// A single schema violation, locatable within one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NodeTypeRange { node: usize, type_id: u16, t_o: usize },
    BoxEmpty { node: usize, bbox: [u16; 4] },
    BoxOutOfImage { node: usize, bbox: [u16; 4], width: u16, height: u16 },
    EndpointRange { edge: usize, src: usize, dst: usize, n: usize },
    SelfLoop { edge: usize, node: usize },
    DuplicateEdge { src: usize, dst: usize },
    RelRange { edge: usize, rel_id: u16, t_r: usize },
    UndirectedOrder { edge: usize, src: usize, dst: usize },
    MixedWeights { edge: usize },
    TooManyNodes { n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NodeTypeRange { node, type_id, t_o } => {
                write!(f, "node {node}: type id {type_id} out of range (vocab has {t_o})")
            }
            Violation::BoxEmpty { node, bbox } => {
                write!(f, "node {node}: box {bbox:?} has zero width or height")
            }
            Violation::BoxOutOfImage { node, bbox, width, height } => {
                write!(f, "node {node}: box {bbox:?} exceeds image {width}x{height}")
            }
            Violation::EndpointRange { edge, src, dst, n } => {
                write!(f, "edge {edge}: endpoint ({src}, {dst}) out of range (graph has {n} nodes)")
            }
            Violation::SelfLoop { edge, node } => {
                write!(f, "edge {edge}: self-loop on node {node}")
            }
            Violation::DuplicateEdge { src, dst } => {
                write!(f, "duplicate edge ({src}, {dst})")
            }
            Violation::RelRange { edge, rel_id, t_r } => {
                write!(f, "edge {edge}: relation id {rel_id} out of range (vocab has {t_r})")
            }
            Violation::UndirectedOrder { edge, src, dst } => {
                write!(f, "edge {edge}: undirected edge stored as ({src}, {dst}), expected src < dst")
            }
            Violation::MixedWeights { edge } => {
                write!(f, "edge {edge}: weight presence differs from the graph's first edge")
            }
            Violation::TooManyNodes { n } => {
                write!(f, "{n} nodes exceed the {MAX_NODES}-node index space")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph {graph}: {violation}")]
    Invalid { graph: usize, violation: Violation },
}

impl SceneGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn e(&self) -> usize {
        self.edges.len()
    }

    /// True when every edge carries a weight. Graphs must be uniform, which
    /// [`validate`] enforces.
    pub fn has_weights(&self) -> bool {
        self.edges.first().map_or(false, |e| e.weight.is_some())
    }

    /// Restores the canonical `(src, dst)` edge order after edits.
    pub fn sort_edges(&mut self) {
        self.edges.sort_by_key(|e| (e.src, e.dst));
    }
}

/// Checks one graph against the schema and the vocabulary sizes. Returns
/// every violation found; an empty list means the graph is well-formed.
pub fn validate(g: &SceneGraph, t_o: usize, t_r: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.n();
    if n > MAX_NODES {
        out.push(Violation::TooManyNodes { n });
    }
    for (i, node) in g.nodes.iter().enumerate() {
        if (node.type_id as usize) >= t_o {
            out.push(Violation::NodeTypeRange { node: i, type_id: node.type_id, t_o });
        }
        let [x, y, w, h] = node.bbox;
        if w == 0 || h == 0 {
            out.push(Violation::BoxEmpty { node: i, bbox: node.bbox });
        } else if x as u32 + w as u32 > g.width as u32 || y as u32 + h as u32 > g.height as u32 {
            out.push(Violation::BoxOutOfImage { node: i, bbox: node.bbox, width: g.width, height: g.height });
        }
    }
    let mut seen = std::collections::HashSet::new();
    let weighted = g.has_weights();
    for (i, e) in g.edges.iter().enumerate() {
        if e.src >= n || e.dst >= n {
            out.push(Violation::EndpointRange { edge: i, src: e.src, dst: e.dst, n });
            continue;
        }
        if e.src == e.dst {
            out.push(Violation::SelfLoop { edge: i, node: e.src });
        }
        if !g.directed && e.src > e.dst {
            out.push(Violation::UndirectedOrder { edge: i, src: e.src, dst: e.dst });
        }
        if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge { src: e.src, dst: e.dst });
        }
        if (e.rel_id as usize) >= t_r {
            out.push(Violation::RelRange { edge: i, rel_id: e.rel_id, t_r });
        }
        if e.weight.is_some() != weighted {
            out.push(Violation::MixedWeights { edge: i });
        }
    }
    out
}

impl Dataset {
    pub fn t_o(&self) -> usize {
        self.vocab.objects.len()
    }

    pub fn t_r(&self) -> usize {
        self.vocab.relations.len()
    }

    /// Validates every graph, reporting the first violation with its graph index.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (gi, g) in self.graphs.iter().enumerate() {
            if let Some(v) = validate(g, self.t_o(), self.t_r()).into_iter().next() {
                return Err(GraphError::Invalid { graph: gi, violation: v });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adjacency

/// Dense 0/1 adjacency with `get(src, dst)` indexing. Undirected graphs are
/// stored symmetrically; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn zero(n: usize) -> Self {
        AdjacencyMatrix { n, bits: vec![false; n * n] }
    }

    pub fn from_graph(g: &SceneGraph) -> Self {
        let mut m = AdjacencyMatrix::zero(g.n());
        for e in &g.edges {
            m.set(e.src, e.dst, true);
            if !g.directed {
                m.set(e.dst, e.src, true);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, src: usize, dst: usize) -> bool {
        self.bits[src * self.n + dst]
    }

    pub fn set(&mut self, src: usize, dst: usize, v: bool) {
        assert_ne!(src, dst, "adjacency diagonal must stay zero");
        self.bits[src * self.n + dst] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of entries in the strict upper triangle, i.e. edges whose
    /// source index precedes the destination index.
    pub fn upper_count(&self) -> usize {
        let mut c = 0;
        for s in 0..self.n {
            for d in s + 1..self.n {
                if self.get(s, d) {
                    c += 1;
                }
            }
        }
        c
    }
}

// ---------------------------------------------------------------------------
// JSON datasets

#[derive(Serialize, Deserialize)]
struct NodeDto {
    t: u16,
    #[serde(rename = "box")]
    bbox: [u16; 4],
}

#[derive(Serialize, Deserialize)]
struct EdgeDto {
    s: usize,
    d: usize,
    r: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct GraphDto {
    image_size: (u16, u16),
    nodes: Vec<NodeDto>,
    edges: Vec<EdgeDto>,
    directed: bool,
}

#[derive(Serialize, Deserialize)]
struct DatasetDto {
    vocab: Vocab,
    graphs: Vec<GraphDto>,
}

impl From<&SceneGraph> for GraphDto {
    fn from(g: &SceneGraph) -> Self {
        GraphDto {
            image_size: (g.width, g.height),
            nodes: g.nodes.iter().map(|n| NodeDto { t: n.type_id, bbox: n.bbox }).collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeDto { s: e.src, d: e.dst, r: e.rel_id, w: e.weight })
                .collect(),
            directed: g.directed,
        }
    }
}

impl From<GraphDto> for SceneGraph {
    fn from(dto: GraphDto) -> Self {
        let mut g = SceneGraph {
            width: dto.image_size.0,
            height: dto.image_size.1,
            directed: dto.directed,
            nodes: dto.nodes.into_iter().map(|n| ObjectNode { type_id: n.t, bbox: n.bbox }).collect(),
            edges: dto
                .edges
                .into_iter()
                .map(|e| RelationEdge { src: e.s, dst: e.d, rel_id: e.r, weight: e.w })
                .collect(),
        };
        g.sort_edges();
        g
    }
}

/// Parses a dataset from JSON text, normalises edge order and validates
/// every graph. Schema or range violations are rejected at ingestion.
pub fn parse_dataset(json: &str) -> Result<Dataset, GraphError> {
    let dto: DatasetDto = serde_json::from_str(json)?;
    let ds = Dataset {
        vocab: dto.vocab,
        graphs: dto.graphs.into_iter().map(SceneGraph::from).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn dataset_to_json(ds: &Dataset) -> String {
    let dto = DatasetDto {
        vocab: ds.vocab.clone(),
        graphs: ds.graphs.iter().map(GraphDto::from).collect(),
    };
    serde_json::to_string(&dto).expect("dataset serialization cannot fail")
}

pub fn load_dataset(path: &Path) -> Result<Dataset, GraphError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), GraphError> {
    Ok(std::fs::write(path, dataset_to_json(ds))?)
}

// ---------------------------------------------------------------------------
// Canonical raw serialization

/// Serializes one graph to the canonical raw layout, all little-endian:
/// `u32 N | u32 E | u16 W | u16 H`, then per node `u16 type, 4 x u16 box`,
/// then per edge `u16 src, u16 dst, u16 rel` plus `u8 weight` when the graph
/// is weighted. Edges appear in `(src, dst)` order.
pub fn raw_bytes(g: &SceneGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw_size_bits(g) as usize / 8);
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&(g.e() as u32).to_le_bytes());
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&g.height.to_le_bytes());
    for n in &g.nodes {
        out.extend_from_slice(&n.type_id.to_le_bytes());
        for c in n.bbox {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    let mut edges = g.edges.clone();
    edges.sort_by_key(|e| (e.src, e.dst));
    for e in &edges {
        out.extend_from_slice(&(e.src as u16).to_le_bytes());
        out.extend_from_slice(&(e.dst as u16).to_le_bytes());
        out.extend_from_slice(&e.rel_id.to_le_bytes());
        if let Some(w) = e.weight {
            out.push(w);
        }
    }
    out
}

/// Size of [`raw_bytes`] in bits: `96 + 80 N + 48 E`, plus `8 E` when weighted.
pub fn raw_size_bits(g: &SceneGraph) -> u64 {
    let per_edge = if g.has_weights() { 56 } else { 48 };
    96 + 80 * g.n() as u64 + per_edge * g.e() as u64
}
