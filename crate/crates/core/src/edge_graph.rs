//! Derives a graph over relations: two relations are linked when they
//! share an endpoint, so convolutions over this graph let one relation's
//! prediction see its neighbours in the scene.
//!
//! Linking follows the endpoint roles. A relation whose destination is
//! another's source feeds forward into it; the reverse containment feeds
//! backward; relations sharing a source or sharing a destination are
//! linked symmetrically. The result is consumed through the same causal
//! masking as the node graph, keeping decode order valid.

use crate::graph::AdjacencyMatrix;

/// Builds the relation-to-relation adjacency for the given endpoint list.
/// Entry `(k, l)` means relation `k` feeds relation `l`.
pub fn edge_adjacency(edges: &[(usize, usize)]) -> AdjacencyMatrix {
    let mut adj = AdjacencyMatrix::zero(edges.len());
    for (k, &(ik, jk)) in edges.iter().enumerate() {
        for (l, &(il, jl)) in edges.iter().enumerate() {
            if k == l {
                continue;
            }
            if jk == il || ik == il || jk == jl {
                adj.set(k, l, true);
            }
            if ik == jl {
                adj.set(l, k, true);
            }
        }
    }
    adj
}
