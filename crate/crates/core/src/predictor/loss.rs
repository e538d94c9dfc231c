//! Differentiable code-length objective.
//!
//! [`graph_loss`] rebuilds the walk's conditional models as one tape
//! program over a whole graph, teacher-forced on the true data, and sums
//! the bits every stream would spend. Rounding is relaxed to additive
//! uniform noise on the latents and interval probabilities stay
//! continuous; everything else matches the coding-time arithmetic exactly,
//! so descending this loss descends the real compressed size.

use std::collections::HashMap;

use rand::Rng;

use crate::coder::CompressionOrder;
use crate::diff::{causal_mask, gcc_norm, relation_masks, Tape, Tensor, Var};
use crate::edge_graph::edge_adjacency;
use crate::entropy::{CdfArch, IntervalLikelihood, LearnedInterval, PriorInterval};
use crate::graph::{AdjacencyMatrix, SceneGraph};

use super::config::ModelConfig;
use super::features::{coord_range, coord_scale, edge_data_rows, node_features, EdgeData};
use super::params::Model;
use super::schedule::structure_schedule;

/// Bits spent per stream, read back from one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBits {
    pub prior: f64,
    pub structure: f64,
    pub node_type: f64,
    pub node_loc: f64,
    pub rel_type: f64,
    pub rel_weight: f64,
}

impl LossBits {
    pub fn total(&self) -> f64 {
        self.prior + self.structure + self.node_type + self.node_loc + self.rel_type + self.rel_weight
    }
}

/// Registers every parameter tensor as a tape leaf, keyed by name.
pub fn bind_params(tape: &mut Tape, model: &Model) -> HashMap<String, Var> {
    model
        .params
        .entries()
        .iter()
        .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
        .collect()
}

fn v(vars: &HashMap<String, Var>, name: &str) -> Var {
    *vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
}

fn fc(tape: &mut Tape, vars: &HashMap<String, Var>, name: &str, x: Var) -> Var {
    let w = v(vars, &format!("{name}.w"));
    let b = v(vars, &format!("{name}.b"));
    tape.fc(x, w, b)
}

fn fc_relu(tape: &mut Tape, vars: &HashMap<String, Var>, name: &str, x: Var) -> Var {
    let y = fc(tape, vars, name, x);
    tape.relu(y)
}

fn add_term(tape: &mut Tape, acc: Option<Var>, term: Var) -> Option<Var> {
    Some(match acc {
        Some(a) => tape.add(a, term),
        None => term,
    })
}

/// Interval probabilities of one symbol column under the configured
/// distribution family. `theta_name` names the static parameter row of a
/// partially learned CDF; fully closed-form and fully dynamic families
/// ignore it.
fn interval_probs(
    tape: &mut Tape,
    vars: &HashMap<String, Var>,
    cfg: &ModelConfig,
    omega: Var,
    los: Vec<f64>,
    his: Vec<f64>,
    theta_name: &str,
) -> Var {
    match cfg.dist.param_dist() {
        Some(dist) => tape.custom(Box::new(IntervalLikelihood { dist, los, his }), &[omega]),
        None => {
            let arch = CdfArch::new(cfg.dist.cdf_widths(cfg.cdf_hidden).expect("staged kind"));
            let static_stages = cfg.dist.static_stages();
            let op = LearnedInterval { arch, static_stages, los, his };
            if static_stages > 0 {
                let theta = v(vars, theta_name);
                tape.custom(Box::new(op), &[omega, theta])
            } else {
                tape.custom(Box::new(op), &[omega])
            }
        }
    }
}

/// Standardised interval boundaries for box coordinate `coord` of every
/// node, with the extreme symbols absorbing their tails and extents capped
/// by the space the box origin leaves.
fn loc_boundaries(cfg: &ModelConfig, g: &SceneGraph, coord: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = coord_scale(g.width, g.height, coord);
    let mut los = Vec::with_capacity(g.n());
    let mut his = Vec::with_capacity(g.n());
    for node in &g.nodes {
        let (lo, mut hi) = coord_range(g.width, g.height, coord);
        if coord == 2 {
            hi = i64::from(g.width) - i64::from(node.bbox[0]);
        } else if coord == 3 {
            hi = i64::from(g.height) - i64::from(node.bbox[1]);
        }
        let sym = node.bbox[coord] as i64;
        los.push(if sym == lo { f64::NEG_INFINITY } else { cfg.standardise(sym as f64 - 0.5, scale) });
        his.push(if sym == hi { f64::INFINITY } else { cfg.standardise(sym as f64 + 0.5, scale) });
    }
    (los, his)
}

/// Code length of one graph in bits, as a differentiable scalar plus the
/// per-stream values. `rng` supplies the latent rounding noise.
pub fn graph_loss<R: Rng>(
    tape: &mut Tape,
    vars: &HashMap<String, Var>,
    cfg: &ModelConfig,
    g: &SceneGraph,
    rng: &mut R,
) -> (Var, LossBits) {
    let n = g.n();
    assert!(n > 0, "loss needs at least one node");
    let mut bits = LossBits::default();

    let x = tape.leaf(node_features(cfg, g));

    // Latents, with rounding relaxed to uniform noise.
    let e1 = fc_relu(tape, vars, "prior.enc1", x);
    let e2 = fc_relu(tape, vars, "prior.enc2", e1);
    let e3 = fc_relu(tape, vars, "prior.enc3", e2);
    let y_raw = fc(tape, vars, "prior.enc4", e3);
    let noise = {
        let mut t = Tensor::zeros(n, cfg.latent_ch);
        for val in t.data_mut() {
            *val = rng.gen::<f64>() - 0.5;
        }
        tape.leaf(t)
    };
    let y = tape.add(y_raw, noise);

    let mut prior_term: Option<Var> = None;
    for c in 0..cfg.latent_ch {
        let y_c = tape.slice_cols(y, c, c + 1);
        let theta = v(vars, &format!("prior.cdf.{c}.theta"));
        let arch = CdfArch::new(vec![1, cfg.cdf_hidden, cfg.cdf_hidden, cfg.cdf_hidden, 1]);
        let probs = tape.custom(Box::new(PriorInterval { arch }), &[y_c, theta]);
        let nll = tape.nll_bits(probs);
        let s = tape.sum(nll);
        prior_term = add_term(tape, prior_term, s);
    }
    let prior_term = prior_term.expect("at least one latent channel");
    bits.prior = tape.value(prior_term).item();

    let d1 = fc_relu(tape, vars, "prior.dec1", y);
    let d2 = fc_relu(tape, vars, "prior.dec2", d1);
    let d3 = fc_relu(tape, vars, "prior.dec3", d2);
    let x_hat = fc(tape, vars, "prior.dec4", d3);

    let adj = AdjacencyMatrix::from_graph(g);
    let mut total = prior_term;

    // Adjacency entries, teacher-forced on the true decoded prefix.
    let entries = structure_schedule(n, cfg.directed);
    if !entries.is_empty() {
        let o1 = fc_relu(tape, vars, "struct.o1", x_hat);
        let z_o = fc(tape, vars, "struct.o2", o1);

        let mut ctx_rows = Vec::new();
        let mut ctx_groups: Vec<Vec<usize>> = Vec::new();
        let mut ctx_targets = Vec::new();
        let mut st_rows = Vec::new();
        let mut st_cols = Vec::new();
        let mut st_targets = Vec::new();
        for (r, c) in entries {
            let bit = if adj.get(r, c) { 1.0 } else { 0.0 };
            if r < c && !cfg.ablate.structure_context {
                ctx_rows.push(r);
                ctx_groups.push((0..r).filter(|&s| adj.get(s, c)).collect());
                ctx_targets.push(bit);
            } else {
                st_rows.push(r);
                st_cols.push(c);
                st_targets.push(bit);
            }
        }

        let mut struct_term: Option<Var> = None;
        if !ctx_rows.is_empty() {
            let h_c = fc_relu(tape, vars, "struct.c1", x_hat);
            let mean_ctx = tape.group_mean_rows(h_c, ctx_groups);
            let z_c = fc(tape, vars, "struct.c2", mean_ctx);
            let zo_rows = tape.gather_rows(z_o, &ctx_rows);
            let logits = tape.row_dot(zo_rows, z_c);
            let b = tape.bce_bits(logits, &ctx_targets);
            let s = tape.sum(b);
            struct_term = add_term(tape, struct_term, s);
        }
        if !st_rows.is_empty() {
            let pi1 = fc_relu(tape, vars, "struct.pi1", x_hat);
            let z_pi = fc(tape, vars, "struct.pi2", pi1);
            let zo_rows = tape.gather_rows(z_o, &st_rows);
            let zp_rows = tape.gather_rows(z_pi, &st_cols);
            let logits = tape.row_dot(zo_rows, zp_rows);
            let b = tape.bce_bits(logits, &st_targets);
            let s = tape.sum(b);
            struct_term = add_term(tape, struct_term, s);
        }
        if let Some(s) = struct_term {
            bits.structure = tape.value(s).item();
            total = tape.add(total, s);
        }
    }

    // Node data. Causal masks zero every non-decoded contribution, so the
    // full feature matrix stands in for the decoded prefix.
    {
        let ctx = if cfg.ablate.node_context {
            tape.leaf(Tensor::zeros(n, cfg.hidden))
        } else {
            let agg = if cfg.order == CompressionOrder::EdgeFirst {
                let rel_by_pair: HashMap<(usize, usize), usize> =
                    g.edges.iter().map(|ed| ((ed.src, ed.dst), ed.rel_id as usize)).collect();
                let rel_of = |s: usize, d: usize| {
                    let key = if cfg.directed || s < d { (s, d) } else { (d, s) };
                    rel_by_pair[&key]
                };
                let masks = relation_masks(&adj, rel_of, cfg.t_r());
                let thetas: Vec<Var> =
                    (0..cfg.t_r()).map(|r| v(vars, &format!("node.agg.theta.{r}"))).collect();
                tape.rgcn_aggregate(masks, x, &thetas)
            } else {
                let norm = gcc_norm(&causal_mask(&adj));
                let theta = v(vars, "node.agg.theta");
                tape.gcc_aggregate(norm, x, theta)
            };
            let biased = tape.add_bias(agg, v(vars, "node.agg.b"));
            let a = tape.relu(biased);
            let c1 = fc_relu(tape, vars, "node.c1", a);
            let c2 = fc_relu(tape, vars, "node.c2", c1);
            fc_relu(tape, vars, "node.c3", c2)
        };
        let p1 = fc_relu(tape, vars, "node.p1", x_hat);
        let pri = fc_relu(tape, vars, "node.p2", p1);
        let merged = tape.concat_cols(ctx, pri);
        let m1 = fc_relu(tape, vars, "node.m1", merged);
        let m = fc_relu(tape, vars, "node.m2", m1);

        let type_logits = fc(tape, vars, "node.type_head", m);
        let types: Vec<usize> = g.nodes.iter().map(|nd| nd.type_id as usize).collect();
        let ce = tape.cross_entropy_bits(type_logits, &types);
        let type_term = tape.sum(ce);
        bits.node_type = tape.value(type_term).item();
        total = tape.add(total, type_term);

        let omega = fc(tape, vars, "node.loc_head", m);
        let p_len = cfg.dist.omega_len();
        let mut loc_term: Option<Var> = None;
        for coord in 0..4 {
            let om_c = tape.slice_cols(omega, coord * p_len, (coord + 1) * p_len);
            let (los, his) = loc_boundaries(cfg, g, coord);
            let theta_name = format!("node.loc_cdf.{coord}.theta");
            let probs = interval_probs(tape, vars, cfg, om_c, los, his, &theta_name);
            let nll = tape.nll_bits(probs);
            let s = tape.sum(nll);
            loc_term = add_term(tape, loc_term, s);
        }
        let loc_term = loc_term.expect("four coordinates");
        bits.node_loc = tape.value(loc_term).item();
        total = tape.add(total, loc_term);
    }

    // Relation data.
    if g.e() > 0 {
        let endpoints: Vec<(usize, usize)> = g.edges.iter().map(|ed| (ed.src, ed.dst)).collect();
        let srcs: Vec<usize> = endpoints.iter().map(|&(s, _)| s).collect();
        let dsts: Vec<usize> = endpoints.iter().map(|&(_, d)| d).collect();
        let e_count = endpoints.len();

        let ctx = if cfg.ablate.edge_context {
            tape.leaf(Tensor::zeros(e_count, cfg.hidden))
        } else {
            let v_nodes = if cfg.order == CompressionOrder::NodeFirst { x } else { x_hat };
            let vs = tape.gather_rows(v_nodes, &srcs);
            let vd = tape.gather_rows(v_nodes, &dsts);
            let pairs = tape.concat_cols(vs, vd);
            let data: Vec<Option<EdgeData>> = g
                .edges
                .iter()
                .map(|ed| Some(EdgeData { rel: ed.rel_id, weight: ed.weight }))
                .collect();
            let data_leaf = tape.leaf(edge_data_rows(cfg, &data));
            let d_e = tape.concat_cols(pairs, data_leaf);
            let e_norm = gcc_norm(&causal_mask(&edge_adjacency(&endpoints)));
            let agg = tape.gcc_aggregate(e_norm, d_e, v(vars, "edge.agg.theta"));
            let biased = tape.add_bias(agg, v(vars, "edge.agg.b"));
            let a = tape.relu(biased);
            let c1 = fc_relu(tape, vars, "edge.c1", a);
            let c2 = fc_relu(tape, vars, "edge.c2", c1);
            fc_relu(tape, vars, "edge.c3", c2)
        };

        let ps = tape.gather_rows(x_hat, &srcs);
        let pd = tape.gather_rows(x_hat, &dsts);
        let pairs_hat = tape.concat_cols(ps, pd);
        let p1 = fc_relu(tape, vars, "edge.p1", pairs_hat);
        let pri = fc_relu(tape, vars, "edge.p2", p1);

        let own = if cfg.order == CompressionOrder::NodeFirst && !cfg.ablate.edge_context {
            let ts = tape.gather_rows(x, &srcs);
            let td = tape.gather_rows(x, &dsts);
            let pairs_true = tape.concat_cols(ts, td);
            fc_relu(tape, vars, "edge.s1", pairs_true)
        } else {
            tape.leaf(Tensor::zeros(e_count, cfg.hidden))
        };

        let cp = tape.concat_cols(ctx, pri);
        let merged = tape.concat_cols(cp, own);
        let m1 = fc_relu(tape, vars, "edge.m1", merged);
        let m = fc_relu(tape, vars, "edge.m2", m1);

        let rel_logits = fc(tape, vars, "edge.rel_head", m);
        let rels: Vec<usize> = g.edges.iter().map(|ed| ed.rel_id as usize).collect();
        let ce = tape.cross_entropy_bits(rel_logits, &rels);
        let rel_term = tape.sum(ce);
        bits.rel_type = tape.value(rel_term).item();
        total = tape.add(total, rel_term);

        if cfg.has_weights {
            let omega = fc(tape, vars, "edge.weight_head", m);
            let mut los = Vec::with_capacity(e_count);
            let mut his = Vec::with_capacity(e_count);
            for ed in &g.edges {
                let w = i64::from(ed.weight.expect("weighted graph"));
                los.push(if w == 0 { f64::NEG_INFINITY } else { cfg.standardise(w as f64 - 0.5, 256) });
                his.push(if w == 255 { f64::INFINITY } else { cfg.standardise(w as f64 + 0.5, 256) });
            }
            let probs = interval_probs(tape, vars, cfg, omega, los, his, "edge.weight_cdf.theta");
            let nll = tape.nll_bits(probs);
            let w_term = tape.sum(nll);
            bits.rel_weight = tape.value(w_term).item();
            total = tape.add(total, w_term);
        }
    }

    let loss = tape.scale(total, 1.0 / n as f64);
    (loss, bits)
}
