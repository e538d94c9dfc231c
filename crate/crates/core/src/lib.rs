//! Lossless scene-graph compression with learned adaptive prediction.
//!
//! A scene graph is a small directed (or undirected) labelled graph: object
//! nodes carrying a type id and a bounding box, relation edges carrying a
//! type id and an optional weight. This crate compresses such graphs
//! losslessly by predicting a probability distribution for every symbol from
//! the data decoded so far, then entropy-coding the symbols with rANS.
//!
//! The crate is organised along the codec pipeline:
//!
//! * [`graph`] - graph types, validation, JSON datasets, canonical raw bytes
//! * [`preprocess`] - SCC-based node reordering that maximises causal edges
//! * [`edge_graph`] - turns relation edges into nodes of a derived graph so
//!   edge data can be predicted with the same convolution machinery
//! * [`diff`] - minimal f64 reverse-mode autodiff used by training and by
//!   both codec sides for bit-reproducible inference
//! * [`entropy`] - distribution models and their quantisation to integer
//!   frequency tables
//! * [`predictor`] - the learned model: shared prior, structure, node and
//!   edge predictors, plus the symbol walker both codec sides share
//! * [`coder`] - rANS entropy coder and the container framing
//! * [`pipeline`] - synthetic data, training, compress/decompress, metrics

pub mod coder;
pub mod diff;
pub mod edge_graph;
pub mod entropy;
pub mod graph;
pub mod pipeline;
pub mod predictor;
pub mod preprocess;
