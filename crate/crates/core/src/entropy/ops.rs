//! Tape operations producing interval probabilities from raw parameters.
//!
//! Each op maps a batch of per-symbol raw parameter rows to the probability
//! mass the coder would assign to the symbol's unit interval. Boundaries
//! arrive already standardised; infinite boundaries mark bins that absorb a
//! tail and are clamped to a huge finite magnitude so the backward pass
//! stays free of `inf * 0`.

use crate::diff::tensor::sigmoid;
use crate::diff::{CustomGrad, Tensor};

use super::learned::CdfArch;
use super::parametric::{
    gmm_interval, laplace_interval, normal_interval, scale_from_raw, GmmParams, SCALE_RAW_OFFSET,
};

const BOUNDARY_CLAMP: f64 = 1e6;

fn clamp_boundary(x: f64) -> f64 {
    x.clamp(-BOUNDARY_CLAMP, BOUNDARY_CLAMP)
}

/// Closed-form distribution family over a scalar symbol, parameterised by
/// a raw row produced by a predictor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamDist {
    /// Raw row `[mu, sigma_raw]`.
    Gaussian,
    /// Raw row `[mu, scale_raw]`.
    Laplacian,
    /// Raw row `[logits.., mus.., sigma_raws..]` for `k` components.
    Gmm(usize),
}

impl ParamDist {
    pub fn param_len(&self) -> usize {
        match self {
            ParamDist::Gaussian | ParamDist::Laplacian => 2,
            ParamDist::Gmm(k) => 3 * k,
        }
    }

    /// CDF at `u` for the raw parameter row.
    pub fn cdf(&self, params: &[f64], u: f64) -> f64 {
        assert_eq!(params.len(), self.param_len());
        let u = clamp_boundary(u);
        match self {
            ParamDist::Gaussian => super::normal_cdf(u, params[0], scale_from_raw(params[1])),
            ParamDist::Laplacian => super::laplace_cdf(u, params[0], scale_from_raw(params[1])),
            ParamDist::Gmm(k) => GmmParams {
                logits: &params[..*k],
                mus: &params[*k..2 * k],
                sigma_raws: &params[2 * k..],
            }
            .cdf(u),
        }
    }

    /// `P(lo < X <= hi)` plus the gradient with respect to the raw row.
    pub fn interval_grad(&self, params: &[f64], lo: f64, hi: f64) -> (f64, Vec<f64>) {
        assert_eq!(params.len(), self.param_len());
        let lo = clamp_boundary(lo);
        let hi = clamp_boundary(hi);
        match self {
            ParamDist::Gaussian => {
                let sigma = scale_from_raw(params[1]);
                let (p, d_mu, d_sigma) = normal_interval(lo, hi, params[0], sigma);
                (p, vec![d_mu, d_sigma * sigmoid(params[1] + SCALE_RAW_OFFSET)])
            }
            ParamDist::Laplacian => {
                let b = scale_from_raw(params[1]);
                let (p, d_mu, d_b) = laplace_interval(lo, hi, params[0], b);
                (p, vec![d_mu, d_b * sigmoid(params[1] + SCALE_RAW_OFFSET)])
            }
            ParamDist::Gmm(k) => {
                let (p, grads) = gmm_interval(lo, hi, &GmmParams {
                    logits: &params[..*k],
                    mus: &params[*k..2 * k],
                    sigma_raws: &params[2 * k..],
                });
                (p, grads)
            }
        }
    }

    pub fn interval(&self, params: &[f64], lo: f64, hi: f64) -> f64 {
        self.interval_grad(params, lo, hi).0
    }
}

/// Batched interval probability under a closed-form family.
///
/// Input: one tensor of raw parameter rows, `m x param_len`. Output:
/// `m x 1` probabilities for the per-row intervals fixed at construction.
pub struct IntervalLikelihood {
    pub dist: ParamDist,
    pub los: Vec<f64>,
    pub his: Vec<f64>,
}

impl CustomGrad for IntervalLikelihood {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let params = inputs[0];
        assert_eq!(params.rows(), self.los.len());
        assert_eq!(params.cols(), self.dist.param_len());
        let mut out = Tensor::zeros(params.rows(), 1);
        for r in 0..params.rows() {
            let p = self.dist.interval(params.row_slice(r), self.los[r], self.his[r]);
            out.set(r, 0, p);
        }
        out
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, dout: &Tensor) -> Vec<Tensor> {
        let params = inputs[0];
        let mut d_params = Tensor::zeros(params.rows(), params.cols());
        for r in 0..params.rows() {
            let (_, grads) =
                self.dist.interval_grad(params.row_slice(r), self.los[r], self.his[r]);
            let scale = dout.get(r, 0);
            for (c, g) in grads.iter().enumerate() {
                d_params.set(r, c, scale * g);
            }
        }
        vec![d_params]
    }

    fn name(&self) -> &'static str {
        "interval_likelihood"
    }
}

/// Batched interval probability under a staged monotone CDF whose leading
/// stages are shared static parameters and whose trailing stages come from
/// the per-row input.
///
/// Inputs: `[omega (m x dyn_len), theta (1 x static_len)]`, or just
/// `[omega]` when every stage is dynamic. Output: `m x 1` probabilities.
pub struct LearnedInterval {
    pub arch: CdfArch,
    pub static_stages: usize,
    pub los: Vec<f64>,
    pub his: Vec<f64>,
}

impl LearnedInterval {
    pub fn static_len(&self) -> usize {
        self.arch.prefix_len(self.static_stages)
    }

    pub fn dynamic_len(&self) -> usize {
        self.arch.param_len() - self.static_len()
    }

    fn full_params(&self, theta: &[f64], omega_row: &[f64]) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.arch.param_len());
        params.extend_from_slice(theta);
        params.extend_from_slice(omega_row);
        params
    }
}

impl CustomGrad for LearnedInterval {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let omega = inputs[0];
        let theta: &[f64] = if self.static_stages > 0 { inputs[1].row_slice(0) } else { &[] };
        assert_eq!(theta.len(), self.static_len());
        assert_eq!(omega.cols(), self.dynamic_len());
        assert_eq!(omega.rows(), self.los.len());
        let mut out = Tensor::zeros(omega.rows(), 1);
        for r in 0..omega.rows() {
            let params = self.full_params(theta, omega.row_slice(r));
            let lo = clamp_boundary(self.los[r]);
            let hi = clamp_boundary(self.his[r]);
            out.set(r, 0, self.arch.interval(&params, lo, hi));
        }
        out
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, dout: &Tensor) -> Vec<Tensor> {
        let omega = inputs[0];
        let theta: &[f64] = if self.static_stages > 0 { inputs[1].row_slice(0) } else { &[] };
        let n_static = self.static_len();
        let mut d_omega = Tensor::zeros(omega.rows(), omega.cols());
        let mut d_theta = Tensor::zeros(1, n_static);
        for r in 0..omega.rows() {
            let params = self.full_params(theta, omega.row_slice(r));
            let scale = dout.get(r, 0);
            let lo = clamp_boundary(self.los[r]);
            let hi = clamp_boundary(self.his[r]);
            let (_, cache_hi) = self.arch.eval_cached(&params, hi);
            let (_, d_hi) = self.arch.backward(&params, &cache_hi, scale);
            let (_, cache_lo) = self.arch.eval_cached(&params, lo);
            let (_, d_lo) = self.arch.backward(&params, &cache_lo, -scale);
            for i in 0..n_static {
                d_theta.set(0, i, d_theta.get(0, i) + d_hi[i] + d_lo[i]);
            }
            for c in 0..omega.cols() {
                d_omega.set(r, c, d_hi[n_static + c] + d_lo[n_static + c]);
            }
        }
        if self.static_stages > 0 {
            vec![d_omega, d_theta]
        } else {
            vec![d_omega]
        }
    }

    fn name(&self) -> &'static str {
        "learned_interval"
    }
}

/// Unit-interval probability of continuous latents under a fully static
/// staged CDF: `P(y) = C(y + 1/2) - C(y - 1/2)`.
///
/// Inputs: `[y (m x 1), theta (1 x param_len)]`. Gradients flow into both
/// the latents and the CDF parameters.
pub struct PriorInterval {
    pub arch: CdfArch,
}

impl CustomGrad for PriorInterval {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let y = inputs[0];
        let theta = inputs[1].row_slice(0);
        assert_eq!(y.cols(), 1);
        assert_eq!(theta.len(), self.arch.param_len());
        let mut out = Tensor::zeros(y.rows(), 1);
        for r in 0..y.rows() {
            let v = y.get(r, 0);
            out.set(r, 0, self.arch.interval(theta, v - 0.5, v + 0.5));
        }
        out
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, dout: &Tensor) -> Vec<Tensor> {
        let y = inputs[0];
        let theta = inputs[1].row_slice(0);
        let mut d_y = Tensor::zeros(y.rows(), 1);
        let mut d_theta = Tensor::zeros(1, theta.len());
        for r in 0..y.rows() {
            let v = y.get(r, 0);
            let scale = dout.get(r, 0);
            let (_, cache_hi) = self.arch.eval_cached(theta, v + 0.5);
            let (dx_hi, d_hi) = self.arch.backward(theta, &cache_hi, scale);
            let (_, cache_lo) = self.arch.eval_cached(theta, v - 0.5);
            let (dx_lo, d_lo) = self.arch.backward(theta, &cache_lo, -scale);
            d_y.set(r, 0, dx_hi + dx_lo);
            for i in 0..theta.len() {
                d_theta.set(0, i, d_theta.get(0, i) + d_hi[i] + d_lo[i]);
            }
        }
        vec![d_y, d_theta]
    }

    fn name(&self) -> &'static str {
        "prior_interval"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut StdRng, rows: usize, cols: usize, amp: f64) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-amp..amp)).collect(),
        )
    }

    #[test]
    fn gaussian_op_matches_closed_form() {
        let op = IntervalLikelihood {
            dist: ParamDist::Gaussian,
            los: vec![-0.5, f64::NEG_INFINITY],
            his: vec![0.5, -3.5],
        };
        let raw_unit_sigma =
            super::super::inv_softplus(1.0 - super::super::SCALE_FLOOR) - SCALE_RAW_OFFSET;
        let params = Tensor::from_vec(2, 2, vec![0.0, raw_unit_sigma, 0.0, raw_unit_sigma]);
        let out = op.forward(&[&params]);
        assert!((out.get(0, 0) - 0.382_924_922_548_026_24).abs() < 1e-9);
        assert!((out.get(1, 0) - super::super::normal_cdf(-3.5, 0.0, 1.0)).abs() < 1e-9);
    }

    fn check_dist_op(dist: ParamDist, seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        for _ in 0..10 {
            let rows = rng.gen_range(1..5);
            let los: Vec<f64> = (0..rows).map(|_| rng.gen_range(-3.0..2.5)).collect();
            let his: Vec<f64> = los.iter().map(|l| l + rng.gen_range(0.2..2.0)).collect();
            let params = rand_tensor(&mut rng, rows, dist.param_len(), 1.5);
            let err = grad_check(
                |tape, vars| {
                    let op = IntervalLikelihood { dist, los: los.clone(), his: his.clone() };
                    let probs = tape.custom(Box::new(op), vars);
                    let bits = tape.nll_bits(probs);
                    tape.sum(bits)
                },
                &[params],
                1e-5,
            );
            assert!(err < 1e-4, "{dist:?}: gradient error {err}");
        }
    }

    #[test]
    fn gaussian_interval_gradients() {
        check_dist_op(ParamDist::Gaussian, 11);
    }

    #[test]
    fn laplacian_interval_gradients() {
        check_dist_op(ParamDist::Laplacian, 12);
    }

    #[test]
    fn gmm_interval_gradients() {
        check_dist_op(ParamDist::Gmm(3), 13);
    }

    #[test]
    fn infinite_boundaries_stay_finite() {
        let mut rng = StdRng::seed_from_u64(21);
        let params = rand_tensor(&mut rng, 3, 2, 1.0);
        let op = IntervalLikelihood {
            dist: ParamDist::Gaussian,
            los: vec![f64::NEG_INFINITY, -0.5, 2.5],
            his: vec![-2.5, 0.5, f64::INFINITY],
        };
        let out = op.forward(&[&params]);
        assert!(out.is_finite());
        let dout = Tensor::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        let grads = op.backward(&[&params], &out, &dout);
        assert!(grads[0].is_finite());
    }

    #[test]
    fn learned_interval_gradients_two_part() {
        let arch = CdfArch::new(vec![1, 3, 3, 3, 1]);
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..8 {
            let rows = rng.gen_range(1..4);
            let los: Vec<f64> = (0..rows).map(|_| rng.gen_range(-2.0..1.5)).collect();
            let his: Vec<f64> = los.iter().map(|l| l + rng.gen_range(0.2..1.5)).collect();
            let op_arch = arch.clone();
            let omega = rand_tensor(&mut rng, rows, 19, 1.2);
            let theta = rand_tensor(&mut rng, 1, 24, 1.2);
            let (los_c, his_c) = (los.clone(), his.clone());
            let err = grad_check(
                move |tape, vars| {
                    let op = LearnedInterval {
                        arch: op_arch.clone(),
                        static_stages: 2,
                        los: los_c.clone(),
                        his: his_c.clone(),
                    };
                    let probs = tape.custom(Box::new(op), vars);
                    let bits = tape.nll_bits(probs);
                    tape.sum(bits)
                },
                &[omega, theta],
                1e-5,
            );
            assert!(err < 1e-4, "gradient error {err}");
        }
    }

    #[test]
    fn learned_interval_fully_dynamic() {
        let arch = CdfArch::new(vec![1, 3, 1]);
        let mut rng = StdRng::seed_from_u64(41);
        let omega = rand_tensor(&mut rng, 3, 13, 1.0);
        let err = grad_check(
            |tape, vars| {
                let op = LearnedInterval {
                    arch: CdfArch::new(vec![1, 3, 1]),
                    static_stages: 0,
                    los: vec![-0.5, 0.5, -1.5],
                    his: vec![0.5, 1.5, -0.5],
                };
                let probs = tape.custom(Box::new(op), vars);
                let bits = tape.nll_bits(probs);
                tape.sum(bits)
            },
            &[omega],
            1e-5,
        );
        assert!(err < 1e-4, "gradient error {err}");
        assert_eq!(arch.param_len(), 13);
    }

    #[test]
    fn prior_interval_gradients() {
        let mut rng = StdRng::seed_from_u64(51);
        let arch = CdfArch::new(vec![1, 3, 3, 3, 1]);
        let y = rand_tensor(&mut rng, 4, 1, 3.0);
        let theta = rand_tensor(&mut rng, 1, arch.param_len(), 1.0);
        let err = grad_check(
            |tape, vars| {
                let op = PriorInterval { arch: CdfArch::new(vec![1, 3, 3, 3, 1]) };
                let probs = tape.custom(Box::new(op), vars);
                let bits = tape.nll_bits(probs);
                tape.sum(bits)
            },
            &[y, theta],
            1e-5,
        );
        assert!(err < 1e-4, "gradient error {err}");
    }

    #[test]
    fn interval_probabilities_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(61);
        for dist in [ParamDist::Gaussian, ParamDist::Laplacian, ParamDist::Gmm(2)] {
            let params: Vec<f64> =
                (0..dist.param_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut total = 0.0;
            for k in -50..=50i64 {
                let lo = if k == -50 { f64::NEG_INFINITY } else { k as f64 - 0.5 };
                let hi = if k == 50 { f64::INFINITY } else { k as f64 + 0.5 };
                total += dist.interval(&params, lo, hi);
            }
            assert!((total - 1.0).abs() < 1e-9, "{dist:?} sums to {total}");
        }
    }
}
