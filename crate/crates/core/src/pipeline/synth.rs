//! Seeded synthetic scene-graph datasets.
//!
//! Two generators share one config. The nested layout builds indoor scenes
//! where parts sit inside their parent's box and relation types follow a
//! rule table over the endpoint types, so structure, geometry and labels
//! are mutually predictable. The uniform layout draws every field
//! independently, which is the right null model for calibrating structure
//! coding against closed-form entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

use crate::graph::{validate, Dataset, ObjectNode, RelationEdge, SceneGraph, Vocab};

pub const SCENE_OBJECTS: [&str; 12] = [
    "room", "table", "shelf", "chair", "person", "lamp", "cup", "plate", "book", "plant",
    "window", "door",
];
pub const SCENE_RELATIONS: [&str; 5] = ["contains", "supports", "holds", "near", "attached"];

const ROOM: u16 = 0;
const TABLE: u16 = 1;
const SHELF: u16 = 2;
const CHAIR: u16 = 3;
const PERSON: u16 = 4;
const LAMP: u16 = 5;
const CUP: u16 = 6;
const PLATE: u16 = 7;
const BOOK: u16 = 8;
const PLANT: u16 = 9;
const WINDOW: u16 = 10;
const DOOR: u16 = 11;

const CONTAINS: u16 = 0;
const SUPPORTS: u16 = 1;
const HOLDS: u16 = 2;
const NEAR: u16 = 3;
const ATTACHED: u16 = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("edge density {0} is outside [0, 1]")]
    BadDensity(f64),
    #[error("node count range {lo}..={hi} is empty or starts at zero")]
    BadNodeRange { lo: usize, hi: usize },
    #[error("relation table must be square with non-negative rows summing to 1")]
    BadRelTable,
    #[error("nested layout requires the built-in {0}-object scene vocabulary")]
    NestedVocab(usize),
    #[error("image must be at least 8x8 pixels")]
    ImageTooSmall,
}

/// What a parent object may directly contain.
fn child_types(parent: u16) -> &'static [u16] {
    match parent {
        ROOM => &[TABLE, SHELF, CHAIR, PERSON, PLANT, WINDOW, DOOR],
        TABLE => &[CUP, PLATE, LAMP, BOOK],
        SHELF => &[BOOK, PLANT, CUP],
        PERSON => &[CUP, BOOK],
        _ => &[],
    }
}

/// The deterministic relation rule of the scene vocabulary: the label is a
/// function of the endpoint types alone.
pub fn scene_rule(src: u16, dst: u16) -> u16 {
    if dst == WINDOW || dst == DOOR {
        ATTACHED
    } else if src == ROOM {
        CONTAINS
    } else if src == TABLE {
        SUPPORTS
    } else if src == SHELF || src == PERSON {
        HOLDS
    } else {
        NEAR
    }
}

/// Typical footprint of each object type, as a fraction of the image.
fn size_frac(t: u16) -> (f64, f64) {
    match t {
        ROOM => (0.55, 0.95),
        TABLE | SHELF | DOOR => (0.18, 0.45),
        CHAIR | PERSON | WINDOW | PLANT => (0.10, 0.30),
        _ => (0.03, 0.12),
    }
}

/// `P(rel | src type, dst type)`: one probability row per ordered type pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelTable {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl RelTable {
    /// A table that puts all mass on `rule(src, dst)`.
    pub fn from_rule(t_o: usize, t_r: usize, rule: impl Fn(u16, u16) -> u16) -> Self {
        let probs = (0..t_o)
            .map(|s| {
                (0..t_o)
                    .map(|d| {
                        let mut row = vec![0.0; t_r];
                        row[rule(s as u16, d as u16) as usize] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        RelTable { probs }
    }

    pub fn uniform(t_o: usize, t_r: usize) -> Self {
        RelTable { probs: vec![vec![vec![1.0 / t_r as f64; t_r]; t_o]; t_o] }
    }

    /// Mixes every row with the uniform distribution by weight `eps`.
    pub fn with_noise(mut self, eps: f64) -> Self {
        for block in &mut self.probs {
            for row in block.iter_mut() {
                let u = eps / row.len() as f64;
                for p in row.iter_mut() {
                    *p = (1.0 - eps) * *p + u;
                }
            }
        }
        self
    }

    pub fn t_o(&self) -> usize {
        self.probs.len()
    }

    pub fn t_r(&self) -> usize {
        self.probs.first().and_then(|b| b.first()).map_or(0, Vec::len)
    }

    fn well_formed(&self) -> bool {
        let (t_o, t_r) = (self.t_o(), self.t_r());
        t_r > 0
            && self.probs.iter().all(|b| b.len() == t_o)
            && self.probs.iter().flatten().all(|row| {
                row.len() == t_r
                    && row.iter().all(|&p| p >= 0.0)
                    && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
            })
    }

    fn sample(&self, src_t: u16, dst_t: u16, rng: &mut impl Rng) -> u16 {
        let row = &self.probs[src_t as usize][dst_t as usize];
        let mut u: f64 = rng.gen();
        for (r, &p) in row.iter().enumerate() {
            u -= p;
            if u <= 0.0 {
                return r as u16;
            }
        }
        (row.len() - 1) as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Parent/part scenes with rule-driven relations and nested boxes.
    Nested,
    /// Independent uniform fields; edges are i.i.d. Bernoulli(density).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_graphs: usize,
    pub layout: Layout,
    pub nodes_min: usize,
    pub nodes_max: usize,
    /// Target fraction of orderable node pairs carrying an edge.
    pub density: f64,
    pub rel_table: RelTable,
    /// How far a part's box may drift outside its parent, as a fraction of
    /// the parent's extent.
    pub jitter: f64,
    /// Chance that a part also points back at its parent (directed only).
    pub back_edge_prob: f64,
    pub directed: bool,
    pub weighted: bool,
    pub width: u16,
    pub height: u16,
    pub seed: u64,
}

impl SynthConfig {
    /// The standard correlated indoor-scene recipe. Node counts match
    /// photographic scene-graph corpora (a few dozen objects per image),
    /// which also keeps per-graph container overhead small next to the
    /// payload.
    pub fn scene(n_graphs: usize, seed: u64) -> Self {
        SynthConfig {
            n_graphs,
            layout: Layout::Nested,
            nodes_min: 24,
            nodes_max: 44,
            density: 0.04,
            rel_table: RelTable::from_rule(SCENE_OBJECTS.len(), SCENE_RELATIONS.len(), scene_rule)
                .with_noise(0.05),
            jitter: 0.08,
            back_edge_prob: 0.05,
            directed: true,
            weighted: false,
            width: 256,
            height: 256,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(SynthError::BadDensity(self.density));
        }
        if self.nodes_min == 0 || self.nodes_min > self.nodes_max {
            return Err(SynthError::BadNodeRange { lo: self.nodes_min, hi: self.nodes_max });
        }
        if !self.rel_table.well_formed() {
            return Err(SynthError::BadRelTable);
        }
        if self.layout == Layout::Nested && self.rel_table.t_o() != SCENE_OBJECTS.len() {
            return Err(SynthError::NestedVocab(SCENE_OBJECTS.len()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(SynthError::ImageTooSmall);
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        let (t_o, t_r) = (self.rel_table.t_o(), self.rel_table.t_r());
        if t_o == SCENE_OBJECTS.len() && t_r == SCENE_RELATIONS.len() {
            Vocab {
                objects: SCENE_OBJECTS.iter().map(|s| s.to_string()).collect(),
                relations: SCENE_RELATIONS.iter().map(|s| s.to_string()).collect(),
            }
        } else {
            Vocab {
                objects: (0..t_o).map(|i| format!("obj{i}")).collect(),
                relations: (0..t_r).map(|i| format!("rel{i}")).collect(),
            }
        }
    }
}

/// An Erdős–Rényi-style config: fixed node count, i.i.d. edges, uniform
/// node data and relation labels.
pub fn er_config(n_graphs: usize, n: usize, p: f64, t_o: usize, t_r: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_graphs,
        layout: Layout::Uniform,
        nodes_min: n,
        nodes_max: n,
        density: p,
        rel_table: RelTable::uniform(t_o, t_r),
        jitter: 0.0,
        back_edge_prob: 0.0,
        directed: true,
        weighted: false,
        width: 256,
        height: 256,
        seed,
    }
}

/// Generates the configured dataset. Graph `i` depends only on the seed and
/// `i`, so datasets are reproducible and stable under count changes.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let vocab = cfg.vocab();
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    for idx in 0..cfg.n_graphs {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx as u64 + 1);
        let g = match cfg.layout {
            Layout::Nested => nested_graph(cfg, &mut rng),
            Layout::Uniform => uniform_graph(cfg, &mut rng),
        };
        debug_assert!(
            validate(&g, vocab.objects.len(), vocab.relations.len()).is_empty(),
            "generator produced an invalid graph at index {idx}"
        );
        graphs.push(g);
    }
    Ok(Dataset { vocab, graphs })
}

fn total_pairs(n: usize, directed: bool) -> usize {
    if directed {
        n * n.saturating_sub(1)
    } else {
        n * n.saturating_sub(1) / 2
    }
}

fn extent(rng: &mut ChaCha12Rng, frac: (f64, f64), limit: u16) -> u16 {
    let f = rng.gen_range(frac.0..frac.1);
    ((f * limit as f64).round() as u16).clamp(1, limit)
}

fn free_box(rng: &mut ChaCha12Rng, t: u16, width: u16, height: u16) -> [u16; 4] {
    let bw = extent(rng, size_frac(t), width);
    let bh = extent(rng, size_frac(t), height);
    let x = rng.gen_range(0..=width - bw);
    let y = rng.gen_range(0..=height - bh);
    [x, y, bw, bh]
}

fn jittered(rng: &mut ChaCha12Rng, jitter: f64, p0: u16, p_ext: u16, ext: u16, image: u16) -> u16 {
    let inside = if p_ext > ext { rng.gen_range(0..=p_ext - ext) } else { 0 };
    let drift = jitter * p_ext as f64;
    let shift = rng.gen_range(-drift..=drift);
    let pos = p0 as f64 + inside as f64 + shift;
    (pos.round() as i64).clamp(0, i64::from(image - ext)) as u16
}

fn part_box(cfg: &SynthConfig, rng: &mut ChaCha12Rng, t: u16, parent: [u16; 4]) -> [u16; 4] {
    let [px, py, pw, ph] = parent;
    // Part extents scale with the parent, so a whole's box predicts both
    // where its parts sit and how large they are.
    let bw = extent(rng, size_frac(t), pw);
    let bh = extent(rng, size_frac(t), ph);
    let x = jittered(rng, cfg.jitter, px, pw, bw, cfg.width);
    let y = jittered(rng, cfg.jitter, py, ph, bh, cfg.height);
    [x, y, bw, bh]
}

fn geom_weight(rng: &mut ChaCha12Rng, a: &ObjectNode, b: &ObjectNode, width: u16, height: u16) -> u8 {
    let centre = |n: &ObjectNode| {
        (n.bbox[0] as f64 + n.bbox[2] as f64 / 2.0, n.bbox[1] as f64 + n.bbox[3] as f64 / 2.0)
    };
    let (ax, ay) = centre(a);
    let (bx, by) = centre(b);
    let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    let v = 255.0 * (1.0 - dist / diag) + rng.gen_range(-3.0..=3.0);
    v.round().clamp(0.0, 255.0) as u8
}

fn nested_graph(cfg: &SynthConfig, rng: &mut ChaCha12Rng) -> SceneGraph {
    let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
    let mut nodes: Vec<ObjectNode> = Vec::with_capacity(n);
    let mut parent_of: Vec<Option<usize>> = vec![None; n];

    for k in 0..n {
        let eligible: Vec<usize> =
            (0..k).filter(|&p| !child_types(nodes[p].type_id).is_empty()).collect();
        if !eligible.is_empty() && rng.gen_bool(0.85) {
            let p = *eligible.choose(rng).unwrap();
            let t = *child_types(nodes[p].type_id).choose(rng).unwrap();
            nodes.push(ObjectNode { type_id: t, bbox: part_box(cfg, rng, t, nodes[p].bbox) });
            parent_of[k] = Some(p);
        } else {
            let t = if k == 0 {
                *[ROOM, ROOM, ROOM, TABLE, SHELF].choose(rng).unwrap()
            } else {
                rng.gen_range(0..SCENE_OBJECTS.len() as u16)
            };
            nodes.push(ObjectNode { type_id: t, bbox: free_box(rng, t, cfg.width, cfg.height) });
        }
    }

    // Candidate edges in priority order: the part-of skeleton, then pairs
    // sharing a parent, then optional back edges, then everything else.
    // Cutting this list at the density target keeps the most structured
    // edges while hitting the requested edge count.
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut cands: Vec<(usize, usize)> = Vec::new();
    let push = |cands: &mut Vec<(usize, usize)>, used: &mut HashSet<(usize, usize)>, s: usize, d: usize| {
        let key = if cfg.directed || s < d { (s, d) } else { (d, s) };
        if key.0 != key.1 && used.insert(key) {
            cands.push(key);
        }
    };

    for k in 0..n {
        if let Some(p) = parent_of[k] {
            push(&mut cands, &mut used, p, k);
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            if parent_of[a].is_some() && parent_of[a] == parent_of[b] {
                push(&mut cands, &mut used, a, b);
            }
        }
    }
    if cfg.directed {
        for k in 0..n {
            if let Some(p) = parent_of[k] {
                if rng.gen_bool(cfg.back_edge_prob) {
                    push(&mut cands, &mut used, k, p);
                }
            }
        }
    }
    let mut rest: Vec<(usize, usize)> = Vec::new();
    for s in 0..n {
        let lo = if cfg.directed { 0 } else { s + 1 };
        for d in lo..n {
            if s != d && !used.contains(&(s, d)) {
                rest.push((s, d));
            }
        }
    }
    rest.shuffle(rng);
    cands.extend(rest);

    let target = (cfg.density * total_pairs(n, cfg.directed) as f64).round() as usize;
    let m = target.min(cands.len());

    let mut edges: Vec<RelationEdge> = cands[..m]
        .iter()
        .map(|&(s, d)| {
            let rel = cfg.rel_table.sample(nodes[s].type_id, nodes[d].type_id, rng);
            let weight = cfg
                .weighted
                .then(|| geom_weight(rng, &nodes[s], &nodes[d], cfg.width, cfg.height));
            RelationEdge { src: s, dst: d, rel_id: rel, weight }
        })
        .collect();

    // Scatter node ids so the causal structure is something preprocessing
    // must recover rather than a gift of generation order.
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut out_nodes = vec![ObjectNode { type_id: 0, bbox: [0, 0, 1, 1] }; n];
    for k in 0..n {
        out_nodes[ids[k]] = nodes[k];
    }
    for e in &mut edges {
        e.src = ids[e.src];
        e.dst = ids[e.dst];
        if !cfg.directed && e.src > e.dst {
            std::mem::swap(&mut e.src, &mut e.dst);
        }
    }

    let mut g = SceneGraph {
        width: cfg.width,
        height: cfg.height,
        directed: cfg.directed,
        nodes: out_nodes,
        edges,
    };
    g.sort_edges();
    g
}

fn uniform_graph(cfg: &SynthConfig, rng: &mut ChaCha12Rng) -> SceneGraph {
    let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
    let t_o = cfg.rel_table.t_o() as u16;
    let nodes: Vec<ObjectNode> = (0..n)
        .map(|_| {
            let t = rng.gen_range(0..t_o);
            let x = rng.gen_range(0..cfg.width);
            let y = rng.gen_range(0..cfg.height);
            let bw = rng.gen_range(1..=cfg.width - x);
            let bh = rng.gen_range(1..=cfg.height - y);
            ObjectNode { type_id: t, bbox: [x, y, bw, bh] }
        })
        .collect();

    let mut edges = Vec::new();
    for s in 0..n {
        let lo = if cfg.directed { 0 } else { s + 1 };
        for d in lo..n {
            if s != d && rng.gen_bool(cfg.density) {
                let rel = cfg.rel_table.sample(nodes[s].type_id, nodes[d].type_id, rng);
                let weight = cfg.weighted.then(|| rng.gen());
                edges.push(RelationEdge { src: s, dst: d, rel_id: rel, weight });
            }
        }
    }

    SceneGraph { width: cfg.width, height: cfg.height, directed: cfg.directed, nodes, edges }
}

/// A small arbitrary-but-valid graph for serialization tests: eight object
/// types, four relation types, mixed directedness and weighting.
pub fn test_graph(seed: u64) -> SceneGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let directed = rng.gen_bool(0.5);
    let weighted = rng.gen_bool(0.5);
    let width: u16 = rng.gen_range(16..512);
    let height: u16 = rng.gen_range(16..512);
    let n = rng.gen_range(1..=9);

    let nodes: Vec<ObjectNode> = (0..n)
        .map(|_| {
            let x = rng.gen_range(0..width);
            let y = rng.gen_range(0..height);
            ObjectNode {
                type_id: rng.gen_range(0..8),
                bbox: [x, y, rng.gen_range(1..=width - x), rng.gen_range(1..=height - y)],
            }
        })
        .collect();

    let mut edges = Vec::new();
    for s in 0..n {
        let lo = if directed { 0 } else { s + 1 };
        for d in lo..n {
            if s != d && rng.gen_bool(0.25) {
                edges.push(RelationEdge {
                    src: s,
                    dst: d,
                    rel_id: rng.gen_range(0..4),
                    weight: weighted.then(|| rng.gen()),
                });
            }
        }
    }

    SceneGraph { width, height, directed, nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SynthConfig::scene(40, 7);
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
    }

    #[test]
    fn graph_index_is_the_substream() {
        let a = synth_dataset(&SynthConfig::scene(30, 7)).unwrap();
        let b = synth_dataset(&SynthConfig::scene(10, 7)).unwrap();
        assert_eq!(&a.graphs[..10], &b.graphs[..]);
    }

    #[test]
    fn zero_density_means_no_edges() {
        for layout in [Layout::Nested, Layout::Uniform] {
            let mut cfg = SynthConfig::scene(20, 3);
            cfg.layout = layout;
            cfg.density = 0.0;
            let ds = synth_dataset(&cfg).unwrap();
            assert!(ds.graphs.iter().all(|g| g.e() == 0));
        }
    }

    #[test]
    fn deterministic_rule_table_is_obeyed() {
        let mut cfg = SynthConfig::scene(40, 11);
        cfg.rel_table = RelTable::from_rule(12, 5, scene_rule);
        let ds = synth_dataset(&cfg).unwrap();
        let mut seen = 0;
        for g in &ds.graphs {
            for e in &g.edges {
                let (s, d) = (g.nodes[e.src].type_id, g.nodes[e.dst].type_id);
                assert_eq!(e.rel_id, scene_rule(s, d), "edge {}->{}", e.src, e.dst);
                seen += 1;
            }
        }
        assert!(seen > 50, "rule check needs edges, saw {seen}");
    }

    #[test]
    fn density_tracks_the_target() {
        for layout in [Layout::Nested, Layout::Uniform] {
            let mut cfg = SynthConfig::scene(150, 19);
            cfg.layout = layout;
            let (mut e_sum, mut pair_sum) = (0usize, 0usize);
            for g in &synth_dataset(&cfg).unwrap().graphs {
                e_sum += g.e();
                pair_sum += total_pairs(g.n(), g.directed);
            }
            let empirical = e_sum as f64 / pair_sum as f64;
            let err = (empirical - cfg.density).abs() / cfg.density;
            assert!(err < 0.2, "{layout:?}: density {empirical:.4} vs target {}", cfg.density);
        }
    }

    #[test]
    fn every_variant_validates() {
        for (layout, directed, weighted) in [
            (Layout::Nested, true, false),
            (Layout::Nested, true, true),
            (Layout::Nested, false, false),
            (Layout::Uniform, true, true),
            (Layout::Uniform, false, false),
        ] {
            let mut cfg = SynthConfig::scene(25, 5);
            cfg.layout = layout;
            cfg.directed = directed;
            cfg.weighted = weighted;
            let ds = synth_dataset(&cfg).unwrap();
            for (i, g) in ds.graphs.iter().enumerate() {
                let vs = validate(g, ds.vocab.objects.len(), ds.vocab.relations.len());
                assert!(vs.is_empty(), "graph {i} ({layout:?}): {:?}", vs[0]);
                assert_eq!(g.directed, directed);
            }
        }
    }

    #[test]
    fn er_config_is_uniform_with_fixed_n() {
        let cfg = er_config(50, 16, 0.1, 10, 3, 2);
        let ds = synth_dataset(&cfg).unwrap();
        assert!(ds.graphs.iter().all(|g| g.n() == 16));
        assert_eq!(ds.vocab.objects.len(), 10);
        assert_eq!(ds.vocab.relations.len(), 3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = SynthConfig::scene(1, 0);
        cfg.density = 1.5;
        assert!(matches!(synth_dataset(&cfg), Err(SynthError::BadDensity(_))));

        let mut cfg = SynthConfig::scene(1, 0);
        cfg.nodes_min = 0;
        assert!(matches!(synth_dataset(&cfg), Err(SynthError::BadNodeRange { .. })));

        let mut cfg = SynthConfig::scene(1, 0);
        cfg.rel_table.probs[0][0][0] += 0.5;
        assert!(matches!(synth_dataset(&cfg), Err(SynthError::BadRelTable)));

        let mut cfg = SynthConfig::scene(1, 0);
        cfg.rel_table = RelTable::uniform(4, 2);
        assert!(matches!(synth_dataset(&cfg), Err(SynthError::NestedVocab(_))));
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = SynthConfig::scene(10, 99);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SynthConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn test_graphs_are_valid() {
        for seed in 0..60 {
            let g = test_graph(seed);
            let vs = validate(&g, 8, 4);
            assert!(vs.is_empty(), "seed {seed}: {:?}", vs[0]);
        }
    }
}
