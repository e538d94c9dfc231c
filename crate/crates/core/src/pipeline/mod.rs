//! End-to-end orchestration: dataset synthesis, the training loop, the
//! per-graph file codec, and evaluation reporting.

pub mod codec;
pub mod eval;
pub mod metrics;
pub mod synth;
pub mod train;

pub use codec::{
    compress_graph, decompress_graph, estimate_graph, preprocess_graph, CodecError, Compressed,
    CompressOptions, Estimate, PreprocMode,
};
pub use eval::{
    context_check, csv_report, deflate_baseline, evaluate, verify_graph, Baseline, EvalOutcome,
    ReportRow,
};
pub use metrics::{aggregate, measure, Aggregate, GraphMetrics};
pub use synth::{er_config, synth_dataset, Layout, RelTable, SynthConfig, SynthError};
pub use train::{split_indices, train, EpochStats, TrainConfig, TrainError, TrainReport};
