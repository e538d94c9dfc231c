//! Adaptive prediction models for every symbol stream.
//!
//! A [`params::Model`] owns the configuration and all trained tensors. The
//! [`forward`] functions turn a decoded prefix into per-symbol models,
//! [`walk`] drives them through a whole graph in coding order, and
//! [`loss`] re-expresses the same math as a differentiable objective.

pub mod config;
pub mod features;
pub mod forward;
pub mod loss;
pub mod params;
pub mod schedule;
pub mod walk;

pub use config::{Ablations, DistKind, ModelConfig};
pub use loss::{bind_params, graph_loss, LossBits};
pub use params::{Model, ModelIoError, ParamSet};
pub use schedule::structure_schedule;
pub use walk::{
    lehmer_decode, lehmer_digits, walk, DecodeSink, EncodeSink, ProbeRecord, ProbeSink,
    SymbolSink, WalkError, WalkOutcome,
};
