//! Model parameters: construction, seeded initialisation and checkpoints.
//!
//! Parameters live in a name-indexed set whose insertion order is fixed by
//! the configuration, so optimiser state, checkpoints and tape bindings
//! all agree on one canonical enumeration.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::coder::CompressionOrder;
use crate::diff::Tensor;
use crate::entropy::CdfArch;

use super::config::ModelConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SGZ1";
pub const CHECKPOINT_VERSION: u8 = 1;
/// Distinguishes checkpoints from compressed-graph containers, which share
/// the magic; a container has its flag byte here and never this value.
pub const CHECKPOINT_KIND: u8 = b'M';

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not an SGZ1 checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("parameter {0} does not match the configuration")]
    BadParam(String),
}

/// Ordered, name-indexed parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn insert(&mut self, name: String, tensor: Tensor) {
        assert!(
            self.index.insert(name.clone(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.rows() * t.cols()).sum()
    }
}

enum Init {
    Xavier,
    Zero,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Spec {
    Spec { name: name.into(), rows, cols, init }
}

/// Adds an affine layer: a Xavier weight and a zero bias.
fn layer(specs: &mut Vec<Spec>, name: &str, rows: usize, cols: usize) {
    specs.push(spec(format!("{name}.w"), rows, cols, Init::Xavier));
    specs.push(spec(format!("{name}.b"), 1, cols, Init::Zero));
}

/// Adds a zero-initialised output head so a fresh model starts from the
/// maximum-entropy prediction its merge features cannot yet improve.
fn head(specs: &mut Vec<Spec>, name: &str, rows: usize, cols: usize) {
    specs.push(spec(format!("{name}.w"), rows, cols, Init::Zero));
    specs.push(spec(format!("{name}.b"), 1, cols, Init::Zero));
}

fn layout(cfg: &ModelConfig) -> Vec<Spec> {
    let f = cfg.feat();
    let h = cfg.hidden;
    let z = cfg.zdim;
    let l = cfg.latent_ch;
    let p = cfg.dist.omega_len();
    let mut specs = Vec::new();

    layer(&mut specs, "prior.enc1", f, h);
    layer(&mut specs, "prior.enc2", h, h);
    layer(&mut specs, "prior.enc3", h, h);
    layer(&mut specs, "prior.enc4", h, l);
    layer(&mut specs, "prior.dec1", l, h);
    layer(&mut specs, "prior.dec2", h, h);
    layer(&mut specs, "prior.dec3", h, h);
    layer(&mut specs, "prior.dec4", h, f);
    let prior_arch = CdfArch::new(vec![1, cfg.cdf_hidden, cfg.cdf_hidden, cfg.cdf_hidden, 1]);
    for c in 0..l {
        specs.push(spec(format!("prior.cdf.{c}.theta"), 1, prior_arch.param_len(), Init::Zero));
    }

    layer(&mut specs, "struct.o1", f, h);
    layer(&mut specs, "struct.o2", h, z);
    layer(&mut specs, "struct.pi1", f, h);
    layer(&mut specs, "struct.pi2", h, z);
    layer(&mut specs, "struct.c1", f, h);
    layer(&mut specs, "struct.c2", h, z);

    if cfg.order == CompressionOrder::EdgeFirst {
        for r in 0..cfg.t_r() {
            specs.push(spec(format!("node.agg.theta.{r}"), f, h, Init::Xavier));
        }
    } else {
        specs.push(spec("node.agg.theta", f, h, Init::Xavier));
    }
    specs.push(spec("node.agg.b", 1, h, Init::Zero));
    layer(&mut specs, "node.c1", h, h);
    layer(&mut specs, "node.c2", h, h);
    layer(&mut specs, "node.c3", h, h);
    layer(&mut specs, "node.p1", f, h);
    layer(&mut specs, "node.p2", h, h);
    layer(&mut specs, "node.m1", 2 * h, h);
    layer(&mut specs, "node.m2", h, h);
    head(&mut specs, "node.type_head", h, cfg.t_o());
    head(&mut specs, "node.loc_head", h, 4 * p);
    if let Some(widths) = cfg.dist.cdf_widths(cfg.cdf_hidden) {
        let arch = CdfArch::new(widths);
        let static_len = arch.prefix_len(cfg.dist.static_stages());
        if static_len > 0 {
            for c in 0..4 {
                specs.push(spec(format!("node.loc_cdf.{c}.theta"), 1, static_len, Init::Zero));
            }
        }
    }

    specs.push(spec("edge.agg.theta", cfg.edge_feat(), h, Init::Xavier));
    specs.push(spec("edge.agg.b", 1, h, Init::Zero));
    layer(&mut specs, "edge.c1", h, h);
    layer(&mut specs, "edge.c2", h, h);
    layer(&mut specs, "edge.c3", h, h);
    layer(&mut specs, "edge.p1", 2 * f, h);
    layer(&mut specs, "edge.p2", h, h);
    if cfg.order == CompressionOrder::NodeFirst {
        layer(&mut specs, "edge.s1", 2 * f, h);
    }
    layer(&mut specs, "edge.m1", 3 * h, h);
    layer(&mut specs, "edge.m2", h, h);
    head(&mut specs, "edge.rel_head", h, cfg.t_r());
    if cfg.has_weights {
        head(&mut specs, "edge.weight_head", h, p);
        if let Some(widths) = cfg.dist.cdf_widths(cfg.cdf_hidden) {
            let arch = CdfArch::new(widths);
            let static_len = arch.prefix_len(cfg.dist.static_stages());
            if static_len > 0 {
                specs.push(spec("edge.weight_cdf.theta", 1, static_len, Init::Zero));
            }
        }
    }

    specs
}

/// A configured model: hyperparameters plus every trained tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Builds a freshly initialised model. Weight matrices draw from a
    /// seeded Xavier-uniform distribution; biases, output heads and CDF
    /// tables start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        for s in layout(&config) {
            let tensor = match s.init {
                Init::Zero => Tensor::zeros(s.rows, s.cols),
                Init::Xavier => {
                    let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    Tensor::from_vec(
                        s.rows,
                        s.cols,
                        (0..s.rows * s.cols).map(|_| rng.gen_range(-a..a)).collect(),
                    )
                }
            };
            params.insert(s.name, tensor);
        }
        Self { config, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config_json = serde_json::to_vec(&self.config).expect("config serialises");
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(CHECKPOINT_KIND);
        out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&config_json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in self.params.entries() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelIoError> {
        fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], ModelIoError> {
            let slice = bytes.get(*pos..*pos + n).ok_or(ModelIoError::Truncated)?;
            *pos += n;
            Ok(slice)
        }
        let mut pos = 0usize;
        if take(bytes, &mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(ModelIoError::BadMagic);
        }
        let version = take(bytes, &mut pos, 1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(ModelIoError::BadVersion(version));
        }
        if take(bytes, &mut pos, 1)?[0] != CHECKPOINT_KIND {
            return Err(ModelIoError::BadMagic);
        }
        let json_len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
        let config: ModelConfig = serde_json::from_slice(take(bytes, &mut pos, json_len)?)?;
        let count = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;

        let specs = layout(&config);
        if count != specs.len() {
            return Err(ModelIoError::BadParam(format!(
                "expected {} tensors, found {count}",
                specs.len()
            )));
        }
        let mut params = ParamSet::default();
        for s in specs {
            let name_len = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(bytes, &mut pos, name_len)?)
                .map_err(|_| ModelIoError::BadParam("non-utf8 name".into()))?
                .to_string();
            let rows = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
            if name != s.name || rows != s.rows || cols != s.cols {
                return Err(ModelIoError::BadParam(name));
            }
            let raw = take(bytes, &mut pos, rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ModelIoError::BadParam(name));
            }
            params.insert(name, Tensor::from_vec(rows, cols, data));
        }
        if pos != bytes.len() {
            return Err(ModelIoError::BadParam("trailing bytes".into()));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelIoError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
