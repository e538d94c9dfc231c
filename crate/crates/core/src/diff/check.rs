//! Gradient verification against central finite differences.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Builds the scalar function twice per input component to form a central
/// difference and compares it with the tape gradient. Returns the maximum
/// relative error over every component of every input.
///
/// The relative error uses `max(|analytic|, |numeric|, 1e-4)` as the
/// denominator so near-zero gradients are compared absolutely.
pub fn grad_check(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    inputs: &[Tensor],
    eps: f64,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out);
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let o = f(&mut t, &vs);
        t.value(o).item()
    };

    let mut worst = 0.0f64;
    for (ti, tensor) in inputs.iter().enumerate() {
        for k in 0..tensor.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[k] += eps;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[k] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let an = analytic[ti].data()[k];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rand_tensor(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    #[test]
    fn fc_and_activations_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for probe in 0..30 {
            let x = rand_tensor(&mut rng, 3, 4);
            let w = rand_tensor(&mut rng, 4, 2);
            let b = rand_tensor(&mut rng, 1, 2);
            let err = grad_check(
                |t, v| {
                    let h = t.fc(v[0], v[1], v[2]);
                    let h = match probe % 4 {
                        0 => t.relu(h),
                        1 => t.sigmoid(h),
                        2 => t.tanh(h),
                        _ => t.softplus(h),
                    };
                    t.sum(h)
                },
                &[x, w, b],
                1e-5,
            );
            assert!(err < 1e-4, "probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn composite_graph_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for probe in 0..30 {
            let x = rand_tensor(&mut rng, 4, 3);
            let w1 = rand_tensor(&mut rng, 3, 3);
            let b1 = rand_tensor(&mut rng, 1, 3);
            let w2 = rand_tensor(&mut rng, 6, 1);
            let b2 = rand_tensor(&mut rng, 1, 1);
            let err = grad_check(
                |t, v| {
                    let h = t.fc(v[0], v[1], v[2]);
                    let h = t.tanh(h);
                    let cat = t.concat_cols(h, v[0]);
                    let g = t.gather_rows(cat, &[0, 2, 2, 3]);
                    let m = t.group_mean_rows(g, vec![vec![0, 1], vec![], vec![2, 3, 1]]);
                    let o = t.fc(m, v[3], v[4]);
                    let o = t.sigmoid(o);
                    t.sum(o)
                },
                &[x, w1, b1, w2, b2],
                1e-5,
            );
            assert!(err < 1e-4, "probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn loss_head_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for probe in 0..30 {
            let logits = rand_tensor(&mut rng, 5, 4);
            let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
            let err = grad_check(
                |t, v| {
                    let ce = t.cross_entropy_bits(v[0], &targets);
                    t.sum(ce)
                },
                &[logits],
                1e-5,
            );
            assert!(err < 1e-4, "ce probe {probe}: rel err {err}");

            let z = rand_tensor(&mut rng, 6, 1);
            let bits: Vec<f64> = (0..6).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let err = grad_check(
                |t, v| {
                    let b = t.bce_bits(v[0], &bits);
                    t.sum(b)
                },
                &[z],
                1e-5,
            );
            assert!(err < 1e-4, "bce probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn gcc_and_rgcn_gradients() {
        use crate::graph::AdjacencyMatrix;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for probe in 0..30 {
            let n = 5;
            let mut adj = AdjacencyMatrix::zero(n);
            let mut rels = std::collections::HashMap::new();
            for s in 0..n {
                for d in 0..n {
                    if s != d && rng.gen_bool(0.4) {
                        adj.set(s, d, true);
                        rels.insert((s, d), rng.gen_range(0..2usize));
                    }
                }
            }
            let norm = super::super::gcc::gcc_norm(&super::super::gcc::causal_mask(&adj));
            let masks = super::super::gcc::relation_masks(&adj, |s, d| rels[&(s, d)], 2);
            let x = rand_tensor(&mut rng, n, 3);
            let th0 = rand_tensor(&mut rng, 3, 2);
            let th1 = rand_tensor(&mut rng, 3, 2);

            let err = grad_check(
                |t, v| {
                    let y = t.gcc_aggregate(norm.clone(), v[0], v[1]);
                    let y = t.relu(y);
                    t.sum(y)
                },
                &[x.clone(), th0.clone()],
                1e-5,
            );
            assert!(err < 1e-4, "gcc probe {probe}: rel err {err}");

            let err = grad_check(
                |t, v| {
                    let y = t.rgcn_aggregate(masks.clone(), v[0], &[v[1], v[2]]);
                    let y = t.tanh(y);
                    t.sum(y)
                },
                &[x, th0, th1],
                1e-5,
            );
            assert!(err < 1e-4, "rgcn probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn causality_of_context_networks() {
        // outputs at row i must ignore input rows j >= i under a causal mask
        use crate::graph::AdjacencyMatrix;
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..20 {
            let n = 6;
            let mut adj = AdjacencyMatrix::zero(n);
            for s in 0..n {
                for d in 0..n {
                    if s != d && rng.gen_bool(0.5) {
                        adj.set(s, d, true);
                    }
                }
            }
            let norm = super::super::gcc::gcc_norm(&super::super::gcc::causal_mask(&adj));
            let x = rand_tensor(&mut rng, n, 3);
            let th = rand_tensor(&mut rng, 3, 3);
            let w = rand_tensor(&mut rng, 3, 2);
            let b = rand_tensor(&mut rng, 1, 2);

            let run = |x: &Tensor| {
                let mut t = Tape::new();
                let xv = t.leaf(x.clone());
                let thv = t.leaf(th.clone());
                let wv = t.leaf(w.clone());
                let bv = t.leaf(b.clone());
                let h = t.gcc_aggregate(norm.clone(), xv, thv);
                let h = t.relu(h);
                let h = t.fc(h, wv, bv);
                t.value(h).clone()
            };

            let base = run(&x);
            let row = rng.gen_range(0..n);
            let mut x2 = x.clone();
            for c in 0..3 {
                x2.set(row, c, x2.get(row, c) + 10.0);
            }
            let moved = run(&x2);
            for r in 0..=row {
                assert_eq!(base.row_slice(r), moved.row_slice(r), "row {r} leaked from row {row}");
            }
        }
    }
}
