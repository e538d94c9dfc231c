//! Model configuration shared by training, coding and checkpoints.

use serde::{Deserialize, Serialize};

use crate::coder::CompressionOrder;
use crate::entropy::ParamDist;
use crate::graph::Vocab;

/// Distribution family for continuous symbols (box coordinates, weights).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Gaussian,
    Laplacian,
    /// Five-component Gaussian mixture.
    Gmm5,
    /// Ten-component Gaussian mixture.
    Gmm10,
    /// Staged monotone CDF: two trained static stages, two stages produced
    /// per symbol by the predictor.
    Learned,
    /// Staged monotone CDF produced entirely per symbol.
    FullDyn,
}

impl DistKind {
    /// Width of the per-symbol raw parameter row.
    pub fn omega_len(self) -> usize {
        match self {
            DistKind::Gaussian | DistKind::Laplacian => 2,
            DistKind::Gmm5 => 15,
            DistKind::Gmm10 => 30,
            DistKind::Learned => 19,
            DistKind::FullDyn => 13,
        }
    }

    /// The closed-form family, when this kind has one.
    pub fn param_dist(self) -> Option<ParamDist> {
        match self {
            DistKind::Gaussian => Some(ParamDist::Gaussian),
            DistKind::Laplacian => Some(ParamDist::Laplacian),
            DistKind::Gmm5 => Some(ParamDist::Gmm(5)),
            DistKind::Gmm10 => Some(ParamDist::Gmm(10)),
            DistKind::Learned | DistKind::FullDyn => None,
        }
    }

    /// Layer widths of the staged CDF, when this kind uses one.
    pub fn cdf_widths(self, hidden: usize) -> Option<Vec<usize>> {
        match self {
            DistKind::Learned => Some(vec![1, hidden, hidden, hidden, 1]),
            DistKind::FullDyn => Some(vec![1, hidden, 1]),
            _ => None,
        }
    }

    /// Number of leading CDF stages holding trained static parameters.
    pub fn static_stages(self) -> usize {
        match self {
            DistKind::Learned => 2,
            _ => 0,
        }
    }
}

impl std::fmt::Display for DistKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistKind::Gaussian => "gaussian",
            DistKind::Laplacian => "laplacian",
            DistKind::Gmm5 => "gmm5",
            DistKind::Gmm10 => "gmm10",
            DistKind::Learned => "learned",
            DistKind::FullDyn => "fulldyn",
        })
    }
}

impl std::str::FromStr for DistKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(DistKind::Gaussian),
            "laplacian" => Ok(DistKind::Laplacian),
            "gmm5" => Ok(DistKind::Gmm5),
            "gmm10" => Ok(DistKind::Gmm10),
            "learned" => Ok(DistKind::Learned),
            "fulldyn" => Ok(DistKind::FullDyn),
            other => Err(format!("unknown distribution '{other}'")),
        }
    }
}

/// Context paths that can be disabled to measure their value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Zero the decoded-node aggregation feeding node predictions.
    pub node_context: bool,
    /// Predict every adjacency entry from the static embeddings only.
    pub structure_context: bool,
    /// Zero the decoded-relation aggregation and the decoded endpoint rows
    /// feeding relation predictions.
    pub edge_context: bool,
}

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { node_context: true, structure_context: true, edge_context: true }
    }
}

/// Everything needed to rebuild a model's parameter shapes and drive the
/// coder: the data schema plus architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Object and relation vocabularies of the dataset the model is
    /// trained for; their sizes fix the feature dimensions.
    pub vocab: Vocab,
    pub directed: bool,
    pub has_weights: bool,
    pub order: CompressionOrder,
    pub dist: DistKind,
    /// Hidden width of every predictor layer.
    pub hidden: usize,
    /// Dimension of the structure-model node embeddings.
    pub zdim: usize,
    /// Channels in the per-node latent summary.
    pub latent_ch: usize,
    /// Hidden width of staged CDFs.
    pub cdf_hidden: usize,
    /// Width of the standardised coordinate grid fed to location models.
    pub loc_grid: f64,
    pub ablate: Ablations,
}

impl ModelConfig {
    pub fn new(vocab: Vocab, directed: bool, has_weights: bool) -> Self {
        Self {
            vocab,
            directed,
            has_weights,
            order: CompressionOrder::NodeFirst,
            dist: DistKind::Gaussian,
            hidden: 16,
            zdim: 8,
            latent_ch: 2,
            cdf_hidden: 3,
            loc_grid: 8.0,
            ablate: Ablations::none(),
        }
    }

    pub fn t_o(&self) -> usize {
        self.vocab.objects.len()
    }

    pub fn t_r(&self) -> usize {
        self.vocab.relations.len()
    }

    /// Node feature width: type one-hot plus four normalised coordinates.
    pub fn feat(&self) -> usize {
        self.t_o() + 4
    }

    /// Width of a relation's decodable data: type one-hot plus an optional
    /// normalised weight.
    pub fn edge_data(&self) -> usize {
        self.t_r() + usize::from(self.has_weights)
    }

    /// Width of a relation's full feature row: both endpoint node rows
    /// plus its own data.
    pub fn edge_feat(&self) -> usize {
        2 * self.feat() + self.edge_data()
    }

    /// Standardises a raw coordinate for a continuous model:
    /// `u = grid * (x + 1/2) / range - grid / 2`.
    pub fn standardise(&self, x: f64, range: u16) -> f64 {
        self.loc_grid * (x + 0.5) / range as f64 - self.loc_grid / 2.0
    }

    /// Latent symbols are clamped to this inclusive range before coding.
    pub fn latent_range(&self) -> (i64, i64) {
        (-64, 63)
    }
}
