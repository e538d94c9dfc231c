//! Causal masks and degree normalisation for graph convolutions.
//!
//! A decoder processing nodes in index order can only read data of nodes
//! that already finished decoding, so message passing is restricted to edges
//! `s -> d` with `s < d`; the mask row is the receiving node. Self-loops are
//! excluded: a node's own data is never available while it is being decoded.

use super::tensor::Tensor;
use crate::graph::AdjacencyMatrix;

/// Causal message-passing mask: `mask[d][s] = 1` iff the edge `s -> d`
/// exists and `s < d`.
pub fn causal_mask(adj: &AdjacencyMatrix) -> Tensor {
    let n = adj.n();
    let mut m = Tensor::zeros(n, n);
    for d in 0..n {
        for s in 0..d {
            if adj.get(s, d) {
                m.set(d, s, 1.0);
            }
        }
    }
    m
}

/// Symmetric degree normalisation `D^-1/2 M D^-1/2` where
/// `D(i,i) = max(1, row_sum(i) + col_sum(i))`, so isolated nodes stay
/// well-defined and rows without causal in-edges stay exactly zero.
pub fn gcc_norm(mask: &Tensor) -> Tensor {
    let n = mask.rows();
    assert_eq!(mask.cols(), n, "mask must be square");
    let mut deg = vec![0.0f64; n];
    for i in 0..n {
        let mut d = 0.0;
        for j in 0..n {
            d += mask.get(i, j) + mask.get(j, i);
        }
        deg[i] = d.max(1.0);
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = mask.get(i, j);
            if v != 0.0 {
                out.set(i, j, v / (deg[i].sqrt() * deg[j].sqrt()));
            }
        }
    }
    out
}

/// Per-relation causal masks sharing one degree normalisation computed from
/// the union mask. `rels[(s, d)]` gives the relation id of each edge.
pub fn relation_masks(
    adj: &AdjacencyMatrix,
    rel_of: impl Fn(usize, usize) -> usize,
    t_r: usize,
) -> Vec<Tensor> {
    let n = adj.n();
    let union = causal_mask(adj);
    let mut deg = vec![0.0f64; n];
    for i in 0..n {
        let mut d = 0.0;
        for j in 0..n {
            d += union.get(i, j) + union.get(j, i);
        }
        deg[i] = d.max(1.0);
    }
    let mut masks = vec![Tensor::zeros(n, n); t_r];
    for d in 0..n {
        for s in 0..d {
            if adj.get(s, d) {
                let r = rel_of(s, d);
                masks[r].set(d, s, 1.0 / (deg[d].sqrt() * deg[s].sqrt()));
            }
        }
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Tape, Tensor};
    use crate::graph::AdjacencyMatrix;

    fn adj_from(n: usize, edges: &[(usize, usize)]) -> AdjacencyMatrix {
        let mut m = AdjacencyMatrix::zero(n);
        for &(s, d) in edges {
            m.set(s, d, true);
        }
        m
    }

    #[test]
    fn causal_mask_keeps_forward_edges_only() {
        // nodes 0..3; edges 3->0, 0->1, 3->1 plus causal 0->2, 1->3
        let adj = adj_from(4, &[(3, 0), (0, 1), (3, 1), (0, 2), (1, 3)]);
        let m = causal_mask(&adj);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.get(2, 0), 1.0);
        assert_eq!(m.get(3, 1), 1.0);
        // non-causal edges from node 3 vanish
        assert_eq!(m.get(0, 3), 0.0);
        assert_eq!(m.get(1, 3), 0.0);
        assert_eq!(m.sum(), 3.0);
    }

    #[test]
    fn single_edge_aggregate() {
        let adj = adj_from(2, &[(0, 1)]);
        let norm = gcc_norm(&causal_mask(&adj));
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(2, 1, vec![5.0, 7.0]));
        let theta = t.leaf(Tensor::from_vec(1, 1, vec![1.0]));
        let y = t.gcc_aggregate(norm, x, theta);
        // degree of both endpoints is 1: node 0 receives nothing, node 1 gets x0
        assert_eq!(t.value(y).data(), &[0.0, 5.0]);
    }

    #[test]
    fn isolated_rows_stay_zero() {
        let adj = adj_from(3, &[(0, 2)]);
        let norm = gcc_norm(&causal_mask(&adj));
        for j in 0..3 {
            assert_eq!(norm.get(1, j), 0.0);
        }
    }

    #[test]
    fn single_relation_rgcn_equals_gcc() {
        let adj = adj_from(4, &[(0, 1), (1, 2), (0, 3)]);
        let norm = gcc_norm(&causal_mask(&adj));
        let masks = relation_masks(&adj, |_, _| 0, 1);

        let x_data = vec![0.3, -1.0, 0.7, 0.2, 1.5, -0.4, 0.0, 2.0];
        let th_data = vec![0.5, 1.0, -0.25, 0.75];

        let mut t1 = Tape::new();
        let x1 = t1.leaf(Tensor::from_vec(4, 2, x_data.clone()));
        let th1 = t1.leaf(Tensor::from_vec(2, 2, th_data.clone()));
        let gcc = t1.gcc_aggregate(norm, x1, th1);

        let mut t2 = Tape::new();
        let x2 = t2.leaf(Tensor::from_vec(4, 2, x_data));
        let th2 = t2.leaf(Tensor::from_vec(2, 2, th_data));
        let rgcn = t2.rgcn_aggregate(masks, x2, &[th2]);

        assert_eq!(t1.value(gcc), t2.value(rgcn));
    }
}
