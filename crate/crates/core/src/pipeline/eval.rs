//! Dataset-level evaluation: parallel size measurement, report rows, a
//! general-purpose byte-codec baseline, and the verification harnesses
//! behind the `verify` command.

use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::coder::{CoderError, N_SLOTS, STREAM_NAMES};
use crate::entropy::DiscretePmf;
use crate::graph::{raw_bytes, SceneGraph};
use crate::predictor::{
    walk, DecodeSink, EncodeSink, Model, ProbeRecord, ProbeSink, SymbolSink,
};
use crate::preprocess::reorder;

use super::codec::{
    compress_graph, decompress_graph, preprocess_graph, CodecError, CompressOptions,
};
use super::metrics::{aggregate, measure, Aggregate, GraphMetrics};

/// Compresses every graph and aggregates the size accounting.
pub struct EvalOutcome {
    pub metrics: Aggregate,
    pub per_graph: Vec<GraphMetrics>,
}

pub fn evaluate(
    model: &Model,
    graphs: &[SceneGraph],
    opts: &CompressOptions,
) -> Result<EvalOutcome, CodecError> {
    let start = Instant::now();
    let per_graph = graphs
        .par_iter()
        .map(|g| {
            let c = compress_graph(model, g, opts)?;
            Ok(measure(&c.frame, g, c.cir.as_f64()))
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    let metrics = aggregate(&per_graph, start.elapsed().as_secs_f64());
    Ok(EvalOutcome { metrics, per_graph })
}

/// Size of the dataset's canonical serialization through a deflate
/// compressor at maximum effort, for an external point of comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    pub raw_bits: u64,
    pub compressed_bits: u64,
    pub ratio: f64,
}

pub fn deflate_baseline(graphs: &[SceneGraph]) -> Baseline {
    let mut buf = Vec::new();
    for g in graphs {
        buf.extend_from_slice(&raw_bytes(g));
    }
    let packed = miniz_oxide::deflate::compress_to_vec(&buf, 10);
    let raw_bits = buf.len() as u64 * 8;
    let compressed_bits = packed.len() as u64 * 8;
    Baseline {
        raw_bits,
        compressed_bits,
        ratio: compressed_bits as f64 / (raw_bits as f64).max(1.0),
    }
}

/// One labelled measurement in a report table.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    pub label: String,
    pub metrics: Aggregate,
    pub baseline_ratio: Option<f64>,
}

/// Renders rows as CSV. Wall-clock time is deliberately excluded so the
/// same inputs always produce byte-identical reports.
pub fn csv_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("dataset,label,graphs,raw_bits,total_bits,ratio,mean_ratio,bits_per_node,cir");
    for name in STREAM_NAMES {
        out.push(',');
        out.push_str(&name.replace('-', "_"));
        out.push_str("_bits");
    }
    out.push_str(",header_bits,baseline_ratio\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.dataset,
            r.label,
            m.graphs,
            m.raw_bits,
            m.total_bits,
            m.pooled_ratio,
            m.mean_ratio,
            m.mean_bits_per_node,
            m.mean_cir,
        ));
        for b in m.stream_bits {
            out.push_str(&format!(",{b}"));
        }
        out.push_str(&format!(",{}", m.header_bits));
        match r.baseline_ratio {
            Some(b) => out.push_str(&format!(",{b:.6}\n")),
            None => out.push_str(",\n"),
        }
    }
    out
}

/// Wraps a sink and keeps a transcript of every symbol it resolves.
struct Recorder<S> {
    inner: S,
    counts: [usize; N_SLOTS],
    log: Vec<ProbeRecord>,
}

impl<S> Recorder<S> {
    fn new(inner: S) -> Self {
        Recorder { inner, counts: [0; N_SLOTS], log: Vec::new() }
    }
}

impl<S: SymbolSink> SymbolSink for Recorder<S> {
    fn symbol(
        &mut self,
        stream: crate::coder::StreamId,
        pmf: &DiscretePmf,
        truth: Option<i64>,
    ) -> Result<i64, CoderError> {
        let symbol = self.inner.symbol(stream, pmf, truth)?;
        let index = self.counts[stream as usize];
        self.counts[stream as usize] += 1;
        self.log.push(ProbeRecord { stream, index, pmf: pmf.clone(), symbol });
        Ok(symbol)
    }
}

fn walk_logged<S: SymbolSink>(
    model: &Model,
    sink: S,
    pre: &SceneGraph,
    truth: bool,
) -> Result<(Recorder<S>, SceneGraph), CodecError> {
    let mut rec = Recorder::new(sink);
    let out = walk(
        model,
        &mut rec,
        pre.width,
        pre.height,
        pre.n(),
        pre.e(),
        truth.then_some(pre),
        false,
        None,
    )?;
    Ok((rec, out.graph))
}

/// Checks that symbol probabilities depend only on already-coded data:
/// encode- and decode-side tables must agree on every symbol, and flipping
/// one symbol must leave every earlier table bit-identical, including the
/// table of the flipped symbol itself.
pub fn context_check(
    model: &Model,
    g: &SceneGraph,
    opts: &CompressOptions,
    mutations: usize,
    seed: u64,
) -> Result<(), String> {
    let (pre, _) = preprocess_graph(g, opts).map_err(|e| e.to_string())?;

    let (enc, _) = walk_logged(model, EncodeSink::new(), &pre, true).map_err(|e| e.to_string())?;
    let slots = enc.inner.finish();
    let frame = crate::coder::Frame {
        directed: model.config.directed,
        order: model.config.order,
        keep_order: false,
        n: pre.n() as u32,
        e: pre.e() as u32,
        width: pre.width,
        height: pre.height,
        streams: std::array::from_fn(|s| slots[s].clone()),
        has_weights: model.config.has_weights,
        perm_stream: Vec::new(),
    };
    let (dec, decoded) =
        walk_logged(model, DecodeSink::new(&frame), &pre, false).map_err(|e| e.to_string())?;
    if enc.log.len() != dec.log.len() {
        return Err(format!(
            "encoder resolved {} symbols, decoder {}",
            enc.log.len(),
            dec.log.len()
        ));
    }
    for (k, (a, b)) in enc.log.iter().zip(&dec.log).enumerate() {
        if a != b {
            return Err(format!(
                "symbol {k}: encoder saw {:?} #{} -> {}, decoder {:?} #{} -> {}",
                a.stream, a.index, a.symbol, b.stream, b.index, b.symbol
            ));
        }
    }
    if decoded != pre {
        return Err("decoder output differs from the coded graph".into());
    }

    let mut probe = ProbeSink::with_log();
    walk(model, &mut probe, pre.width, pre.height, pre.n(), pre.e(), Some(&pre), false, None)
        .map_err(|e| e.to_string())?;
    let base = probe.records().to_vec();
    for (k, (a, b)) in enc.log.iter().zip(&base).enumerate() {
        if a != b {
            return Err(format!("probe transcript diverges from the encoder at symbol {k}"));
        }
    }

    let mutable: Vec<usize> =
        (0..base.len()).filter(|&k| base[k].pmf.lo() < base[k].pmf.hi()).collect();
    if mutable.is_empty() {
        return Ok(());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..mutations {
        let k = mutable[rng.gen_range(0..mutable.len())];
        let target = &base[k];
        let alt =
            if target.symbol < target.pmf.hi() { target.symbol + 1 } else { target.symbol - 1 };

        let mut probe = ProbeSink::with_log();
        probe.override_symbol(target.stream, target.index, alt);
        walk(model, &mut probe, pre.width, pre.height, pre.n(), pre.e(), Some(&pre), false, None)
            .map_err(|e| e.to_string())?;
        let mutated = probe.records();

        if mutated.len() <= k {
            return Err(format!("mutated walk stopped before symbol {k}"));
        }
        for i in 0..k {
            if mutated[i] != base[i] {
                return Err(format!(
                    "mutating symbol {k} changed the earlier table at symbol {i}"
                ));
            }
        }
        if mutated[k].pmf != target.pmf {
            return Err(format!("mutating symbol {k} changed that symbol's own table"));
        }
        if mutated[k].symbol != alt {
            return Err(format!("override at symbol {k} did not take"));
        }
    }
    Ok(())
}

/// Full verification for one graph: compress, decompress, compare against
/// the reordered input (or the input itself under `keep_order`), then run
/// the context harness.
pub fn verify_graph(
    model: &Model,
    g: &SceneGraph,
    opts: &CompressOptions,
    mutations: usize,
    seed: u64,
) -> Result<(), String> {
    let c = compress_graph(model, g, opts).map_err(|e| e.to_string())?;
    let back = decompress_graph(model, &c.bytes).map_err(|e| e.to_string())?;
    let expect = if opts.keep_order {
        g.clone()
    } else {
        reorder(g, &c.ordering).map_err(|e| e.to_string())?
    };
    if back != expect {
        return Err("roundtrip mismatch".into());
    }
    context_check(model, g, opts, mutations, seed)
}
