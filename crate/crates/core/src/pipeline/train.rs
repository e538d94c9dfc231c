//! Seeded Adam training over per-graph losses.
//!
//! Each step draws a mini-batch, evaluates every graph's loss on its own
//! tape in parallel, averages the gradients in batch order and applies one
//! optimiser update. All randomness is derived from `(seed, epoch, graph)`
//! streams, so checkpoints are bit-identical across runs and thread counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Adam, Param, Tape, Tensor};
use crate::graph::{validate, SceneGraph};
use crate::predictor::{bind_params, graph_loss, Model};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least one non-empty graph")]
    EmptyDataset,
    #[error("graph {graph} does not fit the model: {what}")]
    Incompatible { graph: usize, what: String },
    #[error("loss diverged at epoch {epoch} on graph {graph}")]
    Diverged { epoch: usize, graph: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 1e-3, batch: 8, seed: 7 }
    }
}

/// Mean coding cost over the epoch's graphs, in bits per node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_bits_per_node: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

fn stream_rng(seed: u64, hi: u64, lo: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((hi << 32) | (lo & 0xffff_ffff));
    rng
}

/// Trains `model` in place and reports the per-epoch mean loss. Zero
/// epochs leave the parameters untouched.
pub fn train(
    model: &mut Model,
    graphs: &[SceneGraph],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let usable: Vec<&SceneGraph> = graphs.iter().filter(|g| g.n() > 0).collect();
    if usable.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mc = &model.config;
    for (i, g) in usable.iter().enumerate() {
        if g.directed != mc.directed {
            return Err(TrainError::Incompatible { graph: i, what: "directedness differs".into() });
        }
        if g.e() > 0 && g.has_weights() != mc.has_weights {
            return Err(TrainError::Incompatible { graph: i, what: "weight presence differs".into() });
        }
        if let Some(v) = validate(g, mc.t_o(), mc.t_r()).into_iter().next() {
            return Err(TrainError::Incompatible { graph: i, what: v.to_string() });
        }
    }

    let mut params: Vec<(String, Param)> = model
        .params
        .entries()
        .iter()
        .map(|(name, t)| (name.clone(), Param::new(t.clone())))
        .collect();
    let mut adam = Adam::new(cfg.lr);
    let mut shuffle_rng = stream_rng(cfg.seed, 0, 0);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut bits_sum = 0.0;

        for batch in order.chunks(cfg.batch.max(1)) {
            let results: Vec<(usize, Option<(Vec<Tensor>, f64)>)> = batch
                .par_iter()
                .map(|&idx| {
                    let g = usable[idx];
                    let mut noise = stream_rng(cfg.seed, epoch as u64 + 1, idx as u64);
                    let mut tape = Tape::new();
                    let vars = bind_params(&mut tape, model);
                    let (loss, bits) = graph_loss(&mut tape, &vars, &model.config, g, &mut noise);
                    let per_node = bits.total() / g.n() as f64;
                    if !per_node.is_finite() {
                        return (idx, None);
                    }
                    tape.backward(loss);
                    let grads = model
                        .params
                        .entries()
                        .iter()
                        .map(|(name, _)| tape.grad(vars[name]))
                        .collect();
                    (idx, Some((grads, per_node)))
                })
                .collect();

            let mut batch_grads: Option<Vec<Tensor>> = None;
            for (idx, r) in results {
                let (grads, per_node) =
                    r.ok_or(TrainError::Diverged { epoch, graph: idx })?;
                bits_sum += per_node;
                batch_grads = Some(match batch_grads {
                    None => grads,
                    Some(acc) => acc.iter().zip(&grads).map(|(a, g)| a.add(g)).collect(),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let grads = batch_grads.expect("non-empty batch");

            adam.begin_step();
            for ((_, param), grad) in params.iter_mut().zip(&grads) {
                adam.update(param, &grad.scale(scale));
            }
            for ((name, param), (slot_name, slot)) in
                params.iter().zip(model.params.entries_mut())
            {
                debug_assert_eq!(name, slot_name);
                *slot = param.value.clone();
            }
        }

        report.epochs.push(EpochStats {
            epoch,
            mean_bits_per_node: bits_sum / usable.len() as f64,
        });
    }
    Ok(report)
}

/// Stable 80/20 split of `0..count` by an index hash, so independently
/// built tools agree on the held-out set without sharing state.
pub fn split_indices(count: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..count {
        let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(31);
        if h % 5 == 0 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, SynthConfig};
    use crate::predictor::ModelConfig;

    fn scene_model(graphs: usize) -> (Model, Vec<SceneGraph>) {
        let cfg = SynthConfig::scene(graphs, 41);
        let ds = synth_dataset(&cfg).unwrap();
        let model = Model::init(ModelConfig::new(ds.vocab.clone(), true, false), 3);
        (model, ds.graphs)
    }

    #[test]
    fn zero_epochs_leave_the_model_untouched() {
        let (mut model, graphs) = scene_model(6);
        let before = model.to_bytes();
        let report =
            train(&mut model, &graphs, &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(model.to_bytes(), before);
    }

    #[test]
    fn same_seed_gives_bit_identical_checkpoints() {
        let cfg = TrainConfig { epochs: 2, batch: 4, ..Default::default() };
        let run = || {
            let (mut model, graphs) = scene_model(12);
            train(&mut model, &graphs, &cfg).unwrap();
            model.to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn thread_count_does_not_change_the_checkpoint() {
        // Thread scheduling must not leak into results: gradients are
        // reduced in dataset order regardless of which worker ran them.
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (mut model, graphs) = scene_model(8);
                train(&mut model, &graphs, &TrainConfig { epochs: 2, ..Default::default() })
                    .unwrap();
                model.to_bytes()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn loss_decreases_on_the_synthetic_set() {
        let (mut model, graphs) = scene_model(48);
        let report = train(
            &mut model,
            &graphs,
            &TrainConfig { epochs: 5, lr: 1e-3, batch: 8, seed: 7 },
        )
        .unwrap();
        let first = report.epochs.first().unwrap().mean_bits_per_node;
        let last = report.epochs.last().unwrap().mean_bits_per_node;
        assert!(last < first, "no improvement: {first:.2} -> {last:.2} bits/node");
    }

    #[test]
    fn empty_and_incompatible_datasets_error() {
        let (mut model, mut graphs) = scene_model(4);
        assert!(matches!(train(&mut model, &[], &TrainConfig::default()), Err(TrainError::EmptyDataset)));

        graphs[2].directed = false;
        let err = train(&mut model, &graphs, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::Incompatible { graph: 2, .. }), "{err}");
    }

    #[test]
    fn divergence_is_reported_not_propagated() {
        let (mut model, graphs) = scene_model(4);
        for (_, t) in model.params.entries_mut() {
            for v in t.data_mut() {
                *v = 1e306;
            }
        }
        let err = train(&mut model, &graphs, &TrainConfig { epochs: 1, ..Default::default() })
            .unwrap_err();
        assert!(matches!(err, TrainError::Diverged { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn split_is_stable_and_roughly_80_20() {
        let (train_idx, test_idx) = split_indices(1000);
        assert_eq!(train_idx.len() + test_idx.len(), 1000);
        assert!((150..=250).contains(&test_idx.len()), "test size {}", test_idx.len());
        assert_eq!(split_indices(1000), (train_idx, test_idx));
    }
}
