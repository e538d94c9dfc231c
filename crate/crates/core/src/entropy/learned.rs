//! Monotone learned cumulative distribution functions.
//!
//! The CDF is a stack of small stages. Each stage applies a linear map
//! whose weights pass through a softplus (keeping them positive), then a
//! gated `t + tanh(a) * tanh(t)` nonlinearity whose gate stays in (-1, 1);
//! the final stage is a plain positive-weight linear map into a sigmoid.
//! Positive weights and increasing elementwise nonlinearities make the
//! whole map monotone in its scalar input by construction, so it is a
//! valid CDF for interval probabilities.

use serde::{Deserialize, Serialize};

use crate::diff::tensor::{sigmoid, softplus};

/// Inverse of the softplus: returns `y0` with `softplus(y0) = y`.
pub fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inv_softplus needs a positive target, got {y}");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Raw-weight offset chosen so that zero raw weights give every stage unit
/// slope: each effective weight becomes `1/fan_in`.
fn weight_offset(fan_in: usize) -> f64 {
    inv_softplus(1.0 / fan_in as f64)
}

/// Layer widths of a staged monotone CDF, e.g. `[1, 3, 3, 1]`. The first
/// and last widths are always 1 (scalar in, scalar out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfArch {
    widths: Vec<usize>,
}

struct StageLayout {
    w: usize,
    b: usize,
    gate: Option<usize>,
    din: usize,
    dout: usize,
}

#[derive(Debug, Clone)]
pub struct CdfCache {
    /// Per stage: the input vector and the pre-activation vector.
    stages: Vec<(Vec<f64>, Vec<f64>)>,
}

impl CdfArch {
    pub fn new(widths: Vec<usize>) -> Self {
        assert!(widths.len() >= 2, "need at least one stage");
        assert_eq!(widths[0], 1, "scalar input");
        assert_eq!(*widths.last().unwrap(), 1, "scalar output");
        assert!(widths.iter().all(|&w| w >= 1));
        Self { widths }
    }

    pub fn n_stages(&self) -> usize {
        self.widths.len() - 1
    }

    fn is_final(&self, k: usize) -> bool {
        k + 1 == self.n_stages()
    }

    pub fn stage_len(&self, k: usize) -> usize {
        let din = self.widths[k];
        let dout = self.widths[k + 1];
        din * dout + dout + if self.is_final(k) { 0 } else { dout }
    }

    /// Number of parameters consumed by the first `stages` stages.
    pub fn prefix_len(&self, stages: usize) -> usize {
        (0..stages).map(|k| self.stage_len(k)).sum()
    }

    pub fn param_len(&self) -> usize {
        self.prefix_len(self.n_stages())
    }

    fn layout(&self, k: usize) -> StageLayout {
        let base = self.prefix_len(k);
        let din = self.widths[k];
        let dout = self.widths[k + 1];
        StageLayout {
            w: base,
            b: base + din * dout,
            gate: if self.is_final(k) { None } else { Some(base + din * dout + dout) },
            din,
            dout,
        }
    }

    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        self.eval_cached(params, x).0
    }

    pub fn eval_cached(&self, params: &[f64], x: f64) -> (f64, CdfCache) {
        assert_eq!(params.len(), self.param_len(), "parameter length mismatch");
        let mut cache = CdfCache { stages: Vec::with_capacity(self.n_stages()) };
        let mut u = vec![x];
        for k in 0..self.n_stages() {
            let lay = self.layout(k);
            let off = weight_offset(lay.din);
            let mut t = vec![0.0; lay.dout];
            for (j, tj) in t.iter_mut().enumerate() {
                let mut acc = params[lay.b + j];
                for (i, &ui) in u.iter().enumerate() {
                    acc += ui * softplus(params[lay.w + i * lay.dout + j] + off);
                }
                *tj = acc;
            }
            cache.stages.push((u.clone(), t.clone()));
            u = match lay.gate {
                Some(g) => (0..lay.dout)
                    .map(|j| t[j] + params[g + j].tanh() * t[j].tanh())
                    .collect(),
                None => return (sigmoid(t[0]), cache),
            };
        }
        unreachable!("final stage returns")
    }

    /// Gradient of `d_out * C(x)` with respect to `x` and every parameter.
    pub fn backward(&self, params: &[f64], cache: &CdfCache, d_out: f64) -> (f64, Vec<f64>) {
        let mut d_params = vec![0.0; self.param_len()];
        let mut d_t: Vec<f64> = Vec::new();
        for k in (0..self.n_stages()).rev() {
            let lay = self.layout(k);
            let off = weight_offset(lay.din);
            let (u, t) = &cache.stages[k];
            d_t = match lay.gate {
                None => {
                    let c = sigmoid(t[0]);
                    vec![d_out * c * (1.0 - c)]
                }
                Some(g) => {
                    // d_t currently holds gradients w.r.t. this stage's
                    // gated output u_j = t_j + tanh(a_j) * tanh(t_j).
                    let d_u = d_t;
                    (0..lay.dout)
                        .map(|j| {
                            let a = params[g + j].tanh();
                            let th = t[j].tanh();
                            d_params[g + j] += d_u[j] * th * (1.0 - a * a);
                            d_u[j] * (1.0 + a * (1.0 - th * th))
                        })
                        .collect()
                }
            };
            let mut d_u = vec![0.0; lay.din];
            for j in 0..lay.dout {
                d_params[lay.b + j] += d_t[j];
                for (i, &ui) in u.iter().enumerate() {
                    let raw = params[lay.w + i * lay.dout + j];
                    let w_eff = softplus(raw + off);
                    d_params[lay.w + i * lay.dout + j] += d_t[j] * ui * sigmoid(raw + off);
                    d_u[i] += d_t[j] * w_eff;
                }
            }
            d_t = d_u;
        }
        (d_t[0], d_params)
    }

    pub fn interval(&self, params: &[f64], lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        (self.eval(params, hi) - self.eval(params, lo)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn param_counts() {
        assert_eq!(CdfArch::new(vec![1, 3, 3, 3, 1]).param_len(), 43);
        assert_eq!(CdfArch::new(vec![1, 3, 3, 3, 1]).prefix_len(2), 24);
        assert_eq!(CdfArch::new(vec![1, 3, 1]).param_len(), 13);
        assert_eq!(CdfArch::new(vec![1, 1]).param_len(), 2);
    }

    #[test]
    fn zero_raw_params_give_unit_slope_sigmoid() {
        let arch = CdfArch::new(vec![1, 3, 3, 1]);
        let params = vec![0.0; arch.param_len()];
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((arch.eval(&params, x) - sigmoid(x)).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn unit_weights_compose_to_steep_sigmoid() {
        // Effective weight 1 everywhere multiplies the slope by the fan-in
        // of each stage: widths [1,3,3,3,1] give sigmoid(27 x + c).
        let arch = CdfArch::new(vec![1, 3, 3, 3, 1]);
        let mut params = vec![0.0; arch.param_len()];
        let mut cursor = 0;
        for k in 0..arch.n_stages() {
            let din = arch.widths[k];
            let dout = arch.widths[k + 1];
            for _ in 0..din * dout {
                params[cursor] = inv_softplus(1.0) - weight_offset(din);
                cursor += 1;
            }
            cursor += dout; // biases stay zero
            if k + 1 < arch.n_stages() {
                cursor += dout; // gates stay zero
            }
        }
        let c = 0.3;
        let b_final = arch.param_len() - 1;
        params[b_final] = c;
        for x in [-0.2, -0.05, 0.0, 0.01, 0.15] {
            let got = arch.eval(&params, x);
            let want = sigmoid(27.0 * x + c);
            assert!((got - want).abs() < 1e-9, "x = {x}: {got} vs {want}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = CdfArch::new(vec![1, 3, 3, 1]);
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for probe in 0..30 {
            let params: Vec<f64> = (0..arch.param_len()).map(|_| next() * 2.0).collect();
            let x = next() * 3.0;
            let (_, cache) = arch.eval_cached(&params, x);
            let (dx, dp) = arch.backward(&params, &cache, 1.0);
            let eps = 1e-6;
            let fd_x = (arch.eval(&params, x + eps) - arch.eval(&params, x - eps)) / (2.0 * eps);
            let rel = (dx - fd_x).abs() / dx.abs().max(fd_x.abs()).max(1e-4);
            assert!(rel < 1e-4, "probe {probe}: dx {dx} vs {fd_x}");
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += eps;
                let up = arch.eval(&p, x);
                p[i] -= 2.0 * eps;
                let dn = arch.eval(&p, x);
                let fd = (up - dn) / (2.0 * eps);
                let rel = (dp[i] - fd).abs() / dp[i].abs().max(fd.abs()).max(1e-4);
                assert!(rel < 1e-4, "probe {probe} param {i}: {} vs {fd}", dp[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(
            params in proptest::collection::vec(-3.0f64..3.0, 43),
            xs in proptest::collection::vec(-20.0f64..20.0, 2)
        ) {
            let arch = CdfArch::new(vec![1, 3, 3, 3, 1]);
            let (a, b) = if xs[0] <= xs[1] { (xs[0], xs[1]) } else { (xs[1], xs[0]) };
            let ca = arch.eval(&params, a);
            let cb = arch.eval(&params, b);
            prop_assert!(ca >= 0.0 && ca <= 1.0);
            prop_assert!(cb >= 0.0 && cb <= 1.0);
            prop_assert!(ca <= cb, "C({a}) = {ca} > C({b}) = {cb}");
        }
    }
}
