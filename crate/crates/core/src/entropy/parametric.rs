//! Closed-form continuous distributions and their interval probabilities.

use statrs::function::erf::erfc;

/// Lower bound on every learned scale parameter.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Added to raw scale parameters before the softplus so that a zero raw
/// value maps to a scale of 2, a sane width for freshly initialised models.
pub const SCALE_RAW_OFFSET: f64 = 1.854_586_542_1; // ln(e^2 - 1)

/// Softplus reparameterisation keeping scales positive and bounded away
/// from zero.
pub fn scale_from_raw(raw: f64) -> f64 {
    SCALE_FLOOR + crate::diff::tensor::softplus(raw + SCALE_RAW_OFFSET)
}

pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `P(lo < X <= hi)` for a Gaussian, with partial derivatives in `mu` and
/// `sigma`.
pub fn normal_interval(lo: f64, hi: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    let p = normal_cdf(hi, mu, sigma) - normal_cdf(lo, mu, sigma);
    let pdf_hi = normal_pdf(hi, mu, sigma);
    let pdf_lo = normal_pdf(lo, mu, sigma);
    let d_mu = pdf_lo - pdf_hi;
    let d_sigma = (pdf_lo * (lo - mu) - pdf_hi * (hi - mu)) / sigma;
    (p.max(0.0), d_mu, d_sigma)
}

pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    debug_assert!(b > 0.0);
    let z = (x - mu) / b;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

fn laplace_pdf(x: f64, mu: f64, b: f64) -> f64 {
    0.5 / b * (-((x - mu).abs() / b)).exp()
}

/// Derivative of the Laplace CDF with respect to the scale `b`.
fn laplace_cdf_db(x: f64, mu: f64, b: f64) -> f64 {
    let z = (x - mu) / b;
    if z < 0.0 {
        -0.5 * z.exp() * z / b
    } else {
        -0.5 * (-z).exp() * z / b
    }
}

/// `P(lo < X <= hi)` for a Laplace distribution, with derivatives in `mu`
/// and the scale `b`.
pub fn laplace_interval(lo: f64, hi: f64, mu: f64, b: f64) -> (f64, f64, f64) {
    let p = laplace_cdf(hi, mu, b) - laplace_cdf(lo, mu, b);
    let d_mu = laplace_pdf(lo, mu, b) - laplace_pdf(hi, mu, b);
    let d_b = laplace_cdf_db(hi, mu, b) - laplace_cdf_db(lo, mu, b);
    (p.max(0.0), d_mu, d_b)
}

/// A Gaussian mixture described by raw parameters: component logits, means
/// and raw scales, each of length `k`.
pub struct GmmParams<'a> {
    pub logits: &'a [f64],
    pub mus: &'a [f64],
    pub sigma_raws: &'a [f64],
}

impl GmmParams<'_> {
    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let w = self.weights();
        (0..self.k())
            .map(|i| w[i] * normal_cdf(x, self.mus[i], scale_from_raw(self.sigma_raws[i])))
            .sum()
    }
}

/// Mixture interval probability plus gradients with respect to the raw
/// parameters, laid out as `[d_logits.., d_mus.., d_sigma_raws..]`.
pub fn gmm_interval(lo: f64, hi: f64, params: &GmmParams) -> (f64, Vec<f64>) {
    let k = params.k();
    assert_eq!(params.mus.len(), k);
    assert_eq!(params.sigma_raws.len(), k);
    let w = params.weights();
    let mut grads = vec![0.0; 3 * k];
    let mut comp = vec![0.0; k];
    let mut p = 0.0;
    for i in 0..k {
        let sigma = scale_from_raw(params.sigma_raws[i]);
        let (pi, d_mu, d_sigma) = normal_interval(lo, hi, params.mus[i], sigma);
        comp[i] = pi;
        p += w[i] * pi;
        grads[k + i] = w[i] * d_mu;
        let softplus_slope = crate::diff::tensor::sigmoid(params.sigma_raws[i] + SCALE_RAW_OFFSET);
        grads[2 * k + i] = w[i] * d_sigma * softplus_slope;
    }
    for i in 0..k {
        grads[i] = w[i] * (comp[i] - p);
    }
    (p, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_unit_bin() {
        // Mass of the centre bin of a discretised standard normal.
        let p = normal_cdf(0.5, 0.0, 1.0) - normal_cdf(-0.5, 0.0, 1.0);
        assert!((p - 0.3829).abs() < 1e-4, "p = {p}");
        assert!((p - 0.382_924_922_548_026_24).abs() < 1e-9);
    }

    #[test]
    fn normal_cdf_basics() {
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0, 0.0, 1.0) - 0.841_344_746_068_543).abs() < 1e-9);
        assert!(normal_cdf(10.0, 0.0, 1.0) > 1.0 - 1e-15);
        assert!((normal_cdf(3.0, 3.0, 7.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn laplace_centre_bin_closed_form() {
        for b in [0.3, 1.0, 4.5] {
            let p = laplace_cdf(0.5, 0.0, b) - laplace_cdf(-0.5, 0.0, b);
            let expected = 1.0 - (-0.5 / b).exp();
            assert!((p - expected).abs() < 1e-12, "b = {b}");
        }
    }

    #[test]
    fn scale_floor_enforced() {
        assert!(scale_from_raw(-1e9) >= SCALE_FLOOR);
        assert!((scale_from_raw(0.0) - 2.0).abs() < 1e-9 + SCALE_FLOOR);
        assert!(scale_from_raw(5.0) > scale_from_raw(0.0));
    }

    fn check_interval_grad(
        f: impl Fn(f64, f64) -> (f64, f64, f64),
        mu: f64,
        scale: f64,
    ) {
        let eps = 1e-6;
        let (_, d_mu, d_scale) = f(mu, scale);
        let fd_mu = (f(mu + eps, scale).0 - f(mu - eps, scale).0) / (2.0 * eps);
        let fd_scale = (f(mu, scale + eps).0 - f(mu, scale - eps).0) / (2.0 * eps);
        assert!((d_mu - fd_mu).abs() < 1e-7, "d_mu {d_mu} vs {fd_mu}");
        assert!((d_scale - fd_scale).abs() < 1e-7, "d_scale {d_scale} vs {fd_scale}");
    }

    #[test]
    fn normal_interval_gradients() {
        for (lo, hi, mu, sigma) in [
            (-0.5, 0.5, 0.3, 1.0),
            (1.5, 2.5, 0.0, 0.7),
            (-4.5, -3.5, -1.0, 2.0),
        ] {
            check_interval_grad(|m, s| normal_interval(lo, hi, m, s), mu, sigma);
        }
    }

    #[test]
    fn laplace_interval_gradients() {
        for (lo, hi, mu, b) in [(-0.5, 0.5, 0.2, 1.0), (2.5, 3.5, 1.0, 0.6), (-3.5, -2.5, 0.0, 2.2)] {
            check_interval_grad(|m, s| laplace_interval(lo, hi, m, s), mu, b);
        }
    }

    #[test]
    fn gmm_matches_single_gaussian() {
        let params = GmmParams { logits: &[0.7], mus: &[0.4], sigma_raws: &[0.1] };
        let sigma = scale_from_raw(0.1);
        let (p, grads) = gmm_interval(-0.5, 0.5, &params);
        let (p1, _, _) = normal_interval(-0.5, 0.5, 0.4, sigma);
        assert!((p - p1).abs() < 1e-15);
        assert!(grads[0].abs() < 1e-15, "single-component logit has no effect");
    }

    #[test]
    fn gmm_gradients_finite_difference() {
        let logits = [0.3, -0.2, 0.8];
        let mus = [-1.0, 0.5, 2.0];
        let sigma_raws = [0.0, -0.5, 0.4];
        let eval = |l: &[f64], m: &[f64], s: &[f64]| {
            gmm_interval(-0.5, 1.5, &GmmParams { logits: l, mus: m, sigma_raws: s }).0
        };
        let (_, grads) = gmm_interval(-0.5, 1.5, &GmmParams {
            logits: &logits,
            mus: &mus,
            sigma_raws: &sigma_raws,
        });
        let eps = 1e-6;
        for i in 0..3 {
            let mut l = logits;
            l[i] += eps;
            let up = eval(&l, &mus, &sigma_raws);
            l[i] -= 2.0 * eps;
            let dn = eval(&l, &mus, &sigma_raws);
            assert!((grads[i] - (up - dn) / (2.0 * eps)).abs() < 1e-7);

            let mut m = mus;
            m[i] += eps;
            let up = eval(&logits, &m, &sigma_raws);
            m[i] -= 2.0 * eps;
            let dn = eval(&logits, &m, &sigma_raws);
            assert!((grads[3 + i] - (up - dn) / (2.0 * eps)).abs() < 1e-7);

            let mut s = sigma_raws;
            s[i] += eps;
            let up = eval(&logits, &mus, &s);
            s[i] -= 2.0 * eps;
            let dn = eval(&logits, &mus, &s);
            assert!((grads[6 + i] - (up - dn) / (2.0 * eps)).abs() < 1e-7);
        }
    }
}
