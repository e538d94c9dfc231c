//! Decode order for adjacency entries.
//!
//! Entries are visited column by column. Within column `j`, the incoming
//! entries `(i, j)` for `i < j` come first, in row order, so each one can
//! condition on the column's already-decoded predecessors; the outgoing
//! entries `(j, i)` follow. Undirected graphs store a symmetric matrix and
//! visit only the incoming half.

/// Adjacency entries `(row, col)` in decode order.
pub fn structure_schedule(n: usize, directed: bool) -> Vec<(usize, usize)> {
    let pairs = n.saturating_sub(1) * n;
    let mut order = Vec::with_capacity(if directed { pairs } else { pairs / 2 });
    for j in 1..n {
        for i in 0..j {
            order.push((i, j));
        }
        if directed {
            for i in 0..j {
                order.push((j, i));
            }
        }
    }
    order
}
