//! Reverse-mode tape over [`Tensor`] values.
//!
//! Operations append nodes; [`Tape::backward`] walks them in reverse and
//! accumulates gradients for every node, including leaves. Distribution
//! likelihoods plug in through [`CustomGrad`] so their hand-derived backward
//! passes live next to the forward math they mirror.

use super::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// An operation with caller-supplied forward and backward passes.
pub trait CustomGrad {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor;
    /// Returns one gradient tensor per input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, dout: &Tensor) -> Vec<Tensor>;
    fn name(&self) -> &'static str;
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    MatmulConst(Tensor, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    GroupMeanRows(Var, Vec<Vec<usize>>),
    RowDot(Var, Var),
    Sum(Var),
    NllBits(Var),
    CrossEntropyBits(Var, Vec<usize>),
    BceBits(Var, Vec<f64>),
    Custom(Box<dyn CustomGrad>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Probabilities below this floor stop contributing gradient; keeps
/// `-log2 p` finite when a model momentarily collapses.
pub const PROB_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a leaf (input or parameter). Rejects non-finite values,
    /// the single checkpoint where bad data enters a network.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        assert!(t.is_finite(), "non-finite leaf tensor");
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    /// `c * x` where `c` carries no gradient (e.g. a normalised mask).
    pub fn matmul_const(&mut self, c: Tensor, x: Var) -> Var {
        let v = c.matmul(self.value(x));
        self.push(v, Op::MatmulConst(c, x))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x).add_row(self.value(b));
        self.push(v, Op::AddBias(x, b))
    }

    /// `x w + b`, the fully-connected layer.
    pub fn fc(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).relu();
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).sigmoid();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).tanh();
        self.push(v, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).softplus();
        self.push(v, Op::Softplus(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).concat_cols(self.value(b));
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Var {
        let src = self.value(x);
        assert!(lo < hi && hi <= src.cols(), "slice {lo}..{hi} of {} cols", src.cols());
        let mut out = Tensor::zeros(src.rows(), hi - lo);
        for r in 0..src.rows() {
            out.row_slice_mut(r).copy_from_slice(&src.row_slice(r)[lo..hi]);
        }
        self.push(out, Op::SliceCols(x, lo, hi))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.value(x).gather_rows(idx);
        self.push(v, Op::GatherRows(x, idx.to_vec()))
    }

    /// Output row `r` is the mean of the listed input rows; an empty group
    /// yields a zero row. Used for causal aggregation over decoded prefixes.
    pub fn group_mean_rows(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Var {
        let src = self.value(x);
        let mut out = Tensor::zeros(groups.len(), src.cols());
        for (r, g) in groups.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let inv = 1.0 / g.len() as f64;
            for &i in g {
                for c in 0..src.cols() {
                    out.set(r, c, out.get(r, c) + src.get(i, c) * inv);
                }
            }
        }
        self.push(out, Op::GroupMeanRows(x, groups))
    }

    /// Row-wise dot product of two equal-shape matrices, yielding `m x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "row_dot shape mismatch");
        let mut out = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            let mut acc = 0.0;
            for c in 0..ta.cols() {
                acc += ta.get(r, c) * tb.get(r, c);
            }
            out.set(r, 0, acc);
        }
        self.push(out, Op::RowDot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Elementwise `-log2(max(p, floor))`.
    pub fn nll_bits(&mut self, probs: Var) -> Var {
        let v = self.value(probs).map(|p| -(p.max(PROB_FLOOR)).log2());
        self.push(v, Op::NllBits(probs))
    }

    /// Per-row `-log2 softmax(logits)[target]`.
    pub fn cross_entropy_bits(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per logits row");
        let mut out = Tensor::zeros(l.rows(), 1);
        for r in 0..l.rows() {
            let row = l.row_slice(r);
            let lse = log_sum_exp(row);
            out.set(r, 0, (lse - row[targets[r]]) / std::f64::consts::LN_2);
        }
        self.push(out, Op::CrossEntropyBits(logits, targets.to_vec()))
    }

    /// Per-row `-log2` Bernoulli likelihood of `targets` under `sigmoid(logit)`.
    pub fn bce_bits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.cols(), 1, "bce logits must be m x 1");
        assert_eq!(l.rows(), targets.len(), "one target per logit");
        let mut out = Tensor::zeros(l.rows(), 1);
        for r in 0..l.rows() {
            let z = l.get(r, 0);
            out.set(r, 0, (crate::diff::tensor::softplus(z) - targets[r] * z) / std::f64::consts::LN_2);
        }
        self.push(out, Op::BceBits(logits, targets.to_vec()))
    }

    pub fn custom(&mut self, op: Box<dyn CustomGrad>, inputs: &[Var]) -> Var {
        let refs: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&refs);
        self.push(out, Op::Custom(op, inputs.to_vec()))
    }

    /// Causal graph convolution: `norm_mask * x * theta` where `norm_mask`
    /// is the degree-normalised causal mask from [`super::gcc_norm`].
    pub fn gcc_aggregate(&mut self, norm_mask: Tensor, x: Var, theta: Var) -> Var {
        let agg = self.matmul_const(norm_mask, x);
        self.matmul(agg, theta)
    }

    /// Relation-typed variant: messages through relation `r` use `thetas[r]`,
    /// all normalised by the shared degree matrix baked into `norm_masks`.
    pub fn rgcn_aggregate(&mut self, norm_masks: Vec<Tensor>, x: Var, thetas: &[Var]) -> Var {
        assert_eq!(norm_masks.len(), thetas.len(), "one mask per relation");
        let mut acc: Option<Var> = None;
        for (mask, &theta) in norm_masks.into_iter().zip(thetas) {
            let term = self.gcc_aggregate(mask, x, theta);
            acc = Some(match acc {
                Some(a) => self.add(a, term),
                None => term,
            });
        }
        acc.expect("at least one relation")
    }

    /// Accumulated gradient of `v` after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.rows(), self.nodes[v.0].value.cols()),
        }
    }

    /// Backpropagates from a scalar output through every recorded node.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            let Some(dout) = self.grads[i].take() else { continue };
            self.propagate(i, &dout);
            self.grads[i] = Some(dout);
        }
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        match &mut self.grads[v.0] {
            Some(g) => *g = g.add(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, dout: &Tensor) {
        // Ops are matched by value to keep borrows of self.nodes short.
        enum Pending {
            One(Var, Tensor),
            Two(Var, Tensor, Var, Tensor),
            Many(Vec<(Var, Tensor)>),
            None,
        }
        let pending = match &self.nodes[i].op {
            Op::Leaf => Pending::None,
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                Pending::Two(*a, dout.matmul(&tb.transpose()), *b, ta.transpose().matmul(dout))
            }
            Op::MatmulConst(c, x) => Pending::One(*x, c.transpose().matmul(dout)),
            Op::AddBias(x, b) => {
                let mut db = Tensor::zeros(1, dout.cols());
                for r in 0..dout.rows() {
                    for c in 0..dout.cols() {
                        db.set(0, c, db.get(0, c) + dout.get(r, c));
                    }
                }
                Pending::Two(*x, dout.clone(), *b, db)
            }
            Op::Add(a, b) => Pending::Two(*a, dout.clone(), *b, dout.clone()),
            Op::Sub(a, b) => Pending::Two(*a, dout.clone(), *b, dout.scale(-1.0)),
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                Pending::Two(*a, dout.mul(tb), *b, dout.mul(ta))
            }
            Op::Scale(x, s) => Pending::One(*x, dout.scale(*s)),
            Op::Relu(x) => {
                let mask = self.nodes[x.0].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                Pending::One(*x, dout.mul(&mask))
            }
            Op::Sigmoid(x) => {
                let s = &self.nodes[i].value;
                Pending::One(*x, dout.mul(&s.map(|v| v * (1.0 - v))))
            }
            Op::Tanh(x) => {
                let t = &self.nodes[i].value;
                Pending::One(*x, dout.mul(&t.map(|v| 1.0 - v * v)))
            }
            Op::Softplus(x) => {
                let d = self.nodes[x.0].value.map(sigmoid);
                Pending::One(*x, dout.mul(&d))
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                let mut da = Tensor::zeros(dout.rows(), ca);
                let mut db = Tensor::zeros(dout.rows(), dout.cols() - ca);
                for r in 0..dout.rows() {
                    da.row_slice_mut(r).copy_from_slice(&dout.row_slice(r)[..ca]);
                    db.row_slice_mut(r).copy_from_slice(&dout.row_slice(r)[ca..]);
                }
                Pending::Two(*a, da, *b, db)
            }
            Op::SliceCols(x, lo, _hi) => {
                let src = &self.nodes[x.0].value;
                let mut dx = Tensor::zeros(src.rows(), src.cols());
                for r in 0..dout.rows() {
                    for c in 0..dout.cols() {
                        dx.set(r, lo + c, dout.get(r, c));
                    }
                }
                Pending::One(*x, dx)
            }
            Op::GatherRows(x, idx) => {
                let src = &self.nodes[x.0].value;
                let mut dx = Tensor::zeros(src.rows(), src.cols());
                for (r, &ix) in idx.iter().enumerate() {
                    for c in 0..dout.cols() {
                        dx.set(ix, c, dx.get(ix, c) + dout.get(r, c));
                    }
                }
                Pending::One(*x, dx)
            }
            Op::GroupMeanRows(x, groups) => {
                let src = &self.nodes[x.0].value;
                let mut dx = Tensor::zeros(src.rows(), src.cols());
                for (r, g) in groups.iter().enumerate() {
                    if g.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / g.len() as f64;
                    for &ix in g {
                        for c in 0..dout.cols() {
                            dx.set(ix, c, dx.get(ix, c) + dout.get(r, c) * inv);
                        }
                    }
                }
                Pending::One(*x, dx)
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..ta.rows() {
                    let d = dout.get(r, 0);
                    for c in 0..ta.cols() {
                        da.set(r, c, d * tb.get(r, c));
                        db.set(r, c, d * ta.get(r, c));
                    }
                }
                Pending::Two(*a, da, *b, db)
            }
            Op::Sum(x) => {
                let src = &self.nodes[x.0].value;
                let d = dout.item();
                Pending::One(*x, Tensor::zeros(src.rows(), src.cols()).map(|_| d))
            }
            Op::NllBits(p) => {
                let probs = &self.nodes[p.0].value;
                let mut dp = Tensor::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    for c in 0..probs.cols() {
                        let v = probs.get(r, c);
                        if v > PROB_FLOOR {
                            dp.set(r, c, -dout.get(r, c) / (v * std::f64::consts::LN_2));
                        }
                    }
                }
                Pending::One(*p, dp)
            }
            Op::CrossEntropyBits(l, targets) => {
                let logits = &self.nodes[l.0].value;
                let mut dl = Tensor::zeros(logits.rows(), logits.cols());
                for r in 0..logits.rows() {
                    let row = logits.row_slice(r);
                    let lse = log_sum_exp(row);
                    let d = dout.get(r, 0) / std::f64::consts::LN_2;
                    for (c, &z) in row.iter().enumerate() {
                        let soft = (z - lse).exp();
                        let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                        dl.set(r, c, d * (soft - onehot));
                    }
                }
                Pending::One(*l, dl)
            }
            Op::BceBits(l, targets) => {
                let logits = &self.nodes[l.0].value;
                let mut dl = Tensor::zeros(logits.rows(), 1);
                for r in 0..logits.rows() {
                    let z = logits.get(r, 0);
                    dl.set(r, 0, dout.get(r, 0) * (sigmoid(z) - targets[r]) / std::f64::consts::LN_2);
                }
                Pending::One(*l, dl)
            }
            Op::Custom(op, inputs) => {
                let refs: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let grads = op.backward(&refs, &self.nodes[i].value, dout);
                assert_eq!(grads.len(), inputs.len(), "{}: one gradient per input", op.name());
                Pending::Many(inputs.iter().copied().zip(grads).collect())
            }
        };
        match pending {
            Pending::None => {}
            Pending::One(v, g) => self.accumulate(v, g),
            Pending::Two(a, ga, b, gb) => {
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Pending::Many(list) => {
                for (v, g) in list {
                    self.accumulate(v, g);
                }
            }
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_forward_and_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let w = t.leaf(Tensor::from_vec(2, 2, vec![0.5, -1.0, 0.25, 2.0]));
        let b = t.leaf(Tensor::row(&[0.1, -0.1]));
        let y = t.fc(x, w, b);
        assert_eq!(t.value(y).data(), &[1.0 * 0.5 + 2.0 * 0.25 + 0.1, 1.0 * -1.0 + 2.0 * 2.0 - 0.1]);
        let s = t.sum(y);
        t.backward(s);
        // d/dx of sum(xW + b) is the row sums of W
        assert_eq!(t.grad(x).data(), &[-0.5, 2.25]);
        assert_eq!(t.grad(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_matches_manual() {
        let mut t = Tape::new();
        let l = t.leaf(Tensor::from_vec(1, 3, vec![(3.0f64).ln(), 0.0, 0.0]));
        let ce = t.cross_entropy_bits(l, &[0]);
        // softmax is [0.6, 0.2, 0.2]
        assert!((t.value(ce).item() - (-(0.6f64).log2())).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_manual() {
        let mut t = Tape::new();
        let l = t.leaf(Tensor::from_vec(2, 1, vec![0.0, 2.0]));
        let b = t.bce_bits(l, &[1.0, 0.0]);
        assert!((t.value(b).get(0, 0) - 1.0).abs() < 1e-12);
        let p1 = sigmoid(2.0);
        assert!((t.value(b).get(1, 0) + (1.0 - p1).log2()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn rejects_nan_leaf() {
        let mut t = Tape::new();
        t.leaf(Tensor::scalar(f64::NAN));
    }

    #[test]
    fn group_mean_handles_empty() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(3, 2, vec![2.0, 0.0, 4.0, 2.0, 0.0, 0.0]));
        let g = t.group_mean_rows(x, vec![vec![], vec![0, 1]]);
        assert_eq!(t.value(g).data(), &[0.0, 0.0, 3.0, 1.0]);
    }
}
