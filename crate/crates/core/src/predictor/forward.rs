//! Deterministic forward passes used while coding.
//!
//! Every function here is plain floating-point arithmetic over the decoded
//! prefix of a graph. The encoder, the decoder and the bit estimator all
//! call these same functions with identical inputs, which is what makes
//! the arithmetic coder's models agree bit for bit on both sides.

use crate::diff::{causal_mask, gcc_norm, relation_masks, Tensor};
use crate::entropy::{pmf_from_cdf, CdfArch, DiscretePmf};
use crate::graph::AdjacencyMatrix;

use super::config::{DistKind, ModelConfig};
use super::params::ParamSet;

pub fn fc(p: &ParamSet, name: &str, x: &Tensor) -> Tensor {
    x.matmul(p.get(&format!("{name}.w"))).add_row(p.get(&format!("{name}.b")))
}

pub fn fc_relu(p: &ParamSet, name: &str, x: &Tensor) -> Tensor {
    fc(p, name, x).relu()
}

/// Per-node latent summary, before rounding: the raw encoder output.
pub fn prior_encode(p: &ParamSet, x: &Tensor) -> Tensor {
    let h1 = fc_relu(p, "prior.enc1", x);
    let h2 = fc_relu(p, "prior.enc2", &h1);
    let h3 = fc_relu(p, "prior.enc3", &h2);
    fc(p, "prior.enc4", &h3)
}

/// Reconstruction of every node's features from its latent summary.
pub fn prior_decode(p: &ParamSet, y: &Tensor) -> Tensor {
    let h1 = fc_relu(p, "prior.dec1", y);
    let h2 = fc_relu(p, "prior.dec2", &h1);
    let h3 = fc_relu(p, "prior.dec3", &h2);
    fc(p, "prior.dec4", &h3)
}

/// Node embeddings driving adjacency predictions: `z_o` for rows, `z_pi`
/// for columns without decoded context, and the pre-aggregation rows `h_c`
/// whose causal means form each column's evolving context.
pub struct StructureEmbeds {
    pub z_o: Tensor,
    pub z_pi: Tensor,
    pub h_c: Tensor,
}

pub fn structure_embeds(p: &ParamSet, x_hat: &Tensor) -> StructureEmbeds {
    StructureEmbeds {
        z_o: fc(p, "struct.o2", &fc_relu(p, "struct.o1", x_hat)),
        z_pi: fc(p, "struct.pi2", &fc_relu(p, "struct.pi1", x_hat)),
        h_c: fc_relu(p, "struct.c1", x_hat),
    }
}

/// Log-odds that adjacency entry `(r, c)` is one, given the entries
/// already decoded. Incoming entries (`r < c`) score the row embedding
/// against the column's evolving context — the mean of `h_c` over the
/// column's decoded sources pushed through one more affine map; outgoing
/// and context-ablated entries score against the static column embedding.
pub fn structure_logit(
    cfg: &ModelConfig,
    p: &ParamSet,
    emb: &StructureEmbeds,
    adj: &AdjacencyMatrix,
    r: usize,
    c: usize,
) -> f64 {
    if r < c && !cfg.ablate.structure_context {
        let h = cfg.hidden;
        let sources: Vec<usize> = (0..r).filter(|&s| adj.get(s, c)).collect();
        let mut acc = vec![0.0f64; h];
        if !sources.is_empty() {
            let inv = 1.0 / sources.len() as f64;
            for &s in &sources {
                for (a, &v) in acc.iter_mut().zip(emb.h_c.row_slice(s)) {
                    *a += v * inv;
                }
            }
        }
        let w = p.get("struct.c2.w");
        let b = p.get("struct.c2.b");
        let mut logit = 0.0;
        for jz in 0..w.cols() {
            let mut zc = 0.0;
            for (i, &a) in acc.iter().enumerate() {
                zc += a * w.get(i, jz);
            }
            logit += emb.z_o.get(r, jz) * (zc + b.get(0, jz));
        }
        logit
    } else {
        let mut logit = 0.0;
        for jz in 0..emb.z_o.cols() {
            logit += emb.z_o.get(r, jz) * emb.z_pi.get(c, jz);
        }
        logit
    }
}

/// Causal aggregation masks for node prediction. When relations decode
/// before nodes they carry relation types, so each relation gets its own
/// aggregation weights.
pub enum NodeMasks {
    Gcc(Tensor),
    Rgcn(Vec<Tensor>),
}

pub fn node_masks(
    cfg: &ModelConfig,
    adj: &AdjacencyMatrix,
    rel_of: Option<&dyn Fn(usize, usize) -> usize>,
) -> NodeMasks {
    match rel_of {
        Some(rel_of) => NodeMasks::Rgcn(relation_masks(adj, rel_of, cfg.t_r())),
        None => NodeMasks::Gcc(gcc_norm(&causal_mask(adj))),
    }
}

fn node_aggregate(p: &ParamSet, masks: &NodeMasks, d_nodes: &Tensor) -> Tensor {
    match masks {
        NodeMasks::Gcc(norm) => norm.matmul(d_nodes).matmul(p.get("node.agg.theta")),
        NodeMasks::Rgcn(rel_norms) => {
            let mut out = Tensor::zeros(d_nodes.rows(), p.get("node.agg.b").cols());
            for (r, norm) in rel_norms.iter().enumerate() {
                let part = norm.matmul(d_nodes).matmul(p.get(&format!("node.agg.theta.{r}")));
                out = out.add(&part);
            }
            out
        }
    }
}

pub struct NodeOut {
    /// `n x t_o` type logits.
    pub type_logits: Tensor,
    /// `n x 4 * omega_len` raw location parameters.
    pub omega: Tensor,
}

/// Predicts every node's heads from the decoded-node matrix `d_nodes`
/// (future rows zero) and the prior reconstruction. Causal masks keep row
/// `d` independent of rows at or after `d`.
pub fn node_forward(
    cfg: &ModelConfig,
    p: &ParamSet,
    masks: &NodeMasks,
    d_nodes: &Tensor,
    x_hat: &Tensor,
) -> NodeOut {
    let n = d_nodes.rows();
    let ctx = if cfg.ablate.node_context {
        Tensor::zeros(n, cfg.hidden)
    } else {
        let agg = node_aggregate(p, masks, d_nodes).add_row(p.get("node.agg.b")).relu();
        let h1 = fc_relu(p, "node.c1", &agg);
        let h2 = fc_relu(p, "node.c2", &h1);
        fc_relu(p, "node.c3", &h2)
    };
    let pri = fc_relu(p, "node.p2", &fc_relu(p, "node.p1", x_hat));
    let merged = ctx.concat_cols(&pri);
    let m = fc_relu(p, "node.m2", &fc_relu(p, "node.m1", &merged));
    NodeOut { type_logits: fc(p, "node.type_head", &m), omega: fc(p, "node.loc_head", &m) }
}

pub struct EdgeOut {
    /// `e x t_r` relation-type logits.
    pub rel_logits: Tensor,
    /// `e x omega_len` raw weight parameters, when weights are coded.
    pub weight_omega: Option<Tensor>,
}

/// Predicts every relation's heads. `d_edges` carries endpoint rows plus
/// decoded relation data (future rows' data zero); `prior_pairs` are the
/// prior reconstructions of each relation's endpoints; `true_pairs` are
/// the decoded endpoint node rows, available only when nodes decode first.
pub fn edge_forward(
    cfg: &ModelConfig,
    p: &ParamSet,
    e_norm: &Tensor,
    d_edges: &Tensor,
    prior_pairs: &Tensor,
    true_pairs: Option<&Tensor>,
) -> EdgeOut {
    let e = d_edges.rows();
    let h = cfg.hidden;
    let ctx = if cfg.ablate.edge_context {
        Tensor::zeros(e, h)
    } else {
        let agg = e_norm
            .matmul(d_edges)
            .matmul(p.get("edge.agg.theta"))
            .add_row(p.get("edge.agg.b"))
            .relu();
        let h1 = fc_relu(p, "edge.c1", &agg);
        let h2 = fc_relu(p, "edge.c2", &h1);
        fc_relu(p, "edge.c3", &h2)
    };
    let pri = fc_relu(p, "edge.p2", &fc_relu(p, "edge.p1", prior_pairs));
    let own = match true_pairs {
        Some(rows) if !cfg.ablate.edge_context => fc_relu(p, "edge.s1", rows),
        _ => Tensor::zeros(e, h),
    };
    let merged = ctx.concat_cols(&pri).concat_cols(&own);
    let m = fc_relu(p, "edge.m2", &fc_relu(p, "edge.m1", &merged));
    EdgeOut {
        rel_logits: fc(p, "edge.rel_head", &m),
        weight_omega: if cfg.has_weights { Some(fc(p, "edge.weight_head", &m)) } else { None },
    }
}

/// PMF over a symbol range for a continuous model given its raw per-symbol
/// parameters, an optional static parameter prefix, and the standardising
/// input transform.
pub fn continuous_pmf(
    cfg: &ModelConfig,
    omega: &[f64],
    static_theta: Option<&[f64]>,
    range_scale: u16,
    lo: i64,
    hi: i64,
) -> DiscretePmf {
    let u = |x: f64| cfg.standardise(x, range_scale);
    let pmf = match cfg.dist.param_dist() {
        Some(dist) => pmf_from_cdf(|v| dist.cdf(omega, v), u, lo, hi),
        None => {
            let arch = CdfArch::new(cfg.dist.cdf_widths(cfg.cdf_hidden).expect("staged kind"));
            let mut full = Vec::with_capacity(arch.param_len());
            if let Some(theta) = static_theta {
                full.extend_from_slice(theta);
            }
            full.extend_from_slice(omega);
            assert_eq!(full.len(), arch.param_len());
            pmf_from_cdf(|v| arch.eval(&full, v), u, lo, hi)
        }
    };
    pmf.expect("continuous model always yields positive mass")
}

/// Static theta rows for a staged-CDF location model, one per coordinate.
pub fn loc_static_theta<'a>(cfg: &ModelConfig, p: &'a ParamSet, coord: usize) -> Option<&'a [f64]> {
    if cfg.dist == DistKind::Learned {
        Some(p.get(&format!("node.loc_cdf.{coord}.theta")).row_slice(0))
    } else {
        None
    }
}

pub fn weight_static_theta<'a>(cfg: &ModelConfig, p: &'a ParamSet) -> Option<&'a [f64]> {
    if cfg.dist == DistKind::Learned {
        Some(p.get("edge.weight_cdf.theta").row_slice(0))
    } else {
        None
    }
}

/// PMF of latent channel `c`; static per model, reused for every node.
pub fn latent_pmf(cfg: &ModelConfig, p: &ParamSet, channel: usize) -> DiscretePmf {
    let arch = CdfArch::new(vec![1, cfg.cdf_hidden, cfg.cdf_hidden, cfg.cdf_hidden, 1]);
    let theta = p.get(&format!("prior.cdf.{channel}.theta")).row_slice(0);
    let (lo, hi) = cfg.latent_range();
    pmf_from_cdf(|v| arch.eval(theta, v), |x| x, lo, hi)
        .expect("latent model always yields positive mass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Vocab;
    use crate::predictor::params::Model;

    fn model() -> Model {
        let vocab = Vocab {
            objects: vec!["a".into(), "b".into(), "c".into()],
            relations: vec!["r0".into(), "r1".into()],
        };
        Model::init(ModelConfig::new(vocab, true, false), 5)
    }

    #[test]
    fn prior_roundtrip_shapes() {
        let m = model();
        let x = Tensor::from_vec(2, 7, (0..14).map(|i| i as f64 / 14.0).collect());
        let y = prior_encode(&m.params, &x);
        assert_eq!(y.shape(), (2, 2));
        let x_hat = prior_decode(&m.params, &y);
        assert_eq!(x_hat.shape(), (2, 7));
        assert!(x_hat.is_finite());
    }

    #[test]
    fn fresh_model_type_logits_are_uniform() {
        let m = model();
        let x_hat = Tensor::zeros(3, 7);
        let d = Tensor::zeros(3, 7);
        let masks = node_masks(&m.config, &AdjacencyMatrix::zero(3), None);
        let out = node_forward(&m.config, &m.params, &masks, &d, &x_hat);
        assert!(out.type_logits.data().iter().all(|&v| v == 0.0));
        assert!(out.omega.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn structure_logit_uses_decoded_context() {
        let m = model();
        let x_hat = Tensor::from_vec(3, 7, (0..21).map(|i| (i as f64).sin()).collect());
        let emb = structure_embeds(&m.params, &x_hat);
        let empty = AdjacencyMatrix::zero(3);
        let mut with_edge = AdjacencyMatrix::zero(3);
        with_edge.set(0, 2, true);
        // Entry (1, 2): with the edge (0, 2) decoded, the column context
        // changes, so the logit moves.
        let before = structure_logit(&m.config, &m.params, &emb, &empty, 1, 2);
        let after = structure_logit(&m.config, &m.params, &emb, &with_edge, 1, 2);
        assert!((before - after).abs() > 1e-12);
        // Lower entries ignore decoded context.
        let lo_before = structure_logit(&m.config, &m.params, &emb, &empty, 2, 1);
        let lo_after = structure_logit(&m.config, &m.params, &emb, &with_edge, 2, 1);
        assert_eq!(lo_before, lo_after);
    }

    #[test]
    fn ablated_structure_uses_static_embeddings_everywhere() {
        let mut m = model();
        m.config.ablate.structure_context = true;
        let x_hat = Tensor::from_vec(3, 7, (0..21).map(|i| (i as f64).cos()).collect());
        let emb = structure_embeds(&m.params, &x_hat);
        let empty = AdjacencyMatrix::zero(3);
        let mut with_edge = AdjacencyMatrix::zero(3);
        with_edge.set(0, 2, true);
        let a = structure_logit(&m.config, &m.params, &emb, &empty, 1, 2);
        let b = structure_logit(&m.config, &m.params, &emb, &with_edge, 1, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn continuous_pmf_covers_full_range() {
        let m = model();
        for dist in ["gaussian", "laplacian", "gmm5", "fulldyn"] {
            let mut cfg = m.config.clone();
            cfg.dist = dist.parse().unwrap();
            let omega = vec![0.1; cfg.dist.omega_len()];
            let pmf = continuous_pmf(&cfg, &omega, None, 256, 0, 255);
            assert_eq!(pmf.lo(), 0);
            assert_eq!(pmf.hi(), 255);
        }
    }

    #[test]
    fn latent_pmf_spans_clamp_range() {
        let m = model();
        let pmf = latent_pmf(&m.config, &m.params, 0);
        assert_eq!((pmf.lo(), pmf.hi()), (-64, 63));
        assert!(pmf.freq(0) > pmf.freq(-64));
    }

    #[test]
    fn node_causality_future_rows_do_not_leak() {
        let m = model();
        let mut adj = AdjacencyMatrix::zero(4);
        adj.set(0, 2, true);
        adj.set(1, 2, true);
        adj.set(2, 3, true);
        let masks = node_masks(&m.config, &adj, None);
        let x_hat = Tensor::from_vec(4, 7, (0..28).map(|i| (i as f64 * 0.3).sin()).collect());
        let mut d = Tensor::zeros(4, 7);
        d.row_slice_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4]);
        d.row_slice_mut(1).copy_from_slice(&[0.0, 1.0, 0.0, 0.5, 0.5, 0.2, 0.2]);
        let base = node_forward(&m.config, &m.params, &masks, &d, &x_hat);
        // Filling in later rows must not change earlier predictions.
        d.row_slice_mut(2).copy_from_slice(&[0.0, 0.0, 1.0, 0.9, 0.9, 0.1, 0.1]);
        d.row_slice_mut(3).copy_from_slice(&[1.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.3]);
        let full = node_forward(&m.config, &m.params, &masks, &d, &x_hat);
        for r in 0..3 {
            assert_eq!(base.type_logits.row_slice(r), full.type_logits.row_slice(r));
            assert_eq!(base.omega.row_slice(r), full.omega.row_slice(r));
        }
    }
}
