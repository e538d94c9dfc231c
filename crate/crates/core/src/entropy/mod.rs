//! Probability models and their quantisation to integer frequency tables.
//!
//! Every symbol the codec emits is coded against a [`DiscretePmf`]: integer
//! frequencies over a contiguous symbol range that sum to exactly 2^16 with
//! no zero entry. PMFs come either from categorical logits or from a
//! continuous cumulative distribution discretised to unit bins with the
//! tails folded into the boundary bins. The continuous families are
//! Gaussian, Laplacian, Gaussian mixtures and a monotone learned CDF whose
//! parameters are partly static (trained weights) and partly produced per
//! symbol by the predictors.

mod learned;
mod ops;
mod parametric;
mod pmf;

pub use learned::{inv_softplus, CdfArch, CdfCache};
pub use ops::{IntervalLikelihood, LearnedInterval, ParamDist, PriorInterval};
pub use parametric::{
    gmm_interval, laplace_cdf, laplace_interval, normal_cdf, normal_interval, normal_pdf,
    scale_from_raw, GmmParams, SCALE_FLOOR, SCALE_RAW_OFFSET,
};
pub use pmf::{pmf_from_cdf, DiscretePmf, EntropyError, PRECISION_BITS, PMF_TOTAL};
