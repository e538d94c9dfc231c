//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sgz_core::coder::CompressionOrder;
use sgz_core::graph::{load_dataset, save_dataset, Dataset, SceneGraph};
use sgz_core::pipeline::{
    aggregate, compress_graph, csv_report, decompress_graph, deflate_baseline, er_config,
    evaluate, measure, preprocess_graph, split_indices, synth_dataset, train, verify_graph,
    CompressOptions, ReportRow, SynthConfig, TrainConfig,
};
use sgz_core::predictor::{Ablations, DistKind, Model, ModelConfig};

use rayon::prelude::*;

use crate::manifest::{sha256_file, RunManifest};
use crate::{
    CliError, Command, CompressArgs, DecompressArgs, EvalArgs, SynthArgs, TrainArgs, VerifyArgs,
};

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Decompress(a) => decompress_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    }
}

// ---------------------------------------------------------------------------
// synth

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = match (&a.config, a.preset.as_deref()) {
        (Some(path), _) => read_json::<SynthConfig>(path)?,
        (None, Some("scene")) => SynthConfig::scene(a.graphs, a.seed),
        (None, Some("er")) => er_config(a.graphs, 32, 0.1, 8, 4, a.seed),
        (None, Some(other)) => {
            return Err(CliError::Usage(format!(
                "unknown preset '{other}' (expected scene or er)"
            )))
        }
        (None, None) => return Err(CliError::Usage("synth needs --config or --preset".into())),
    };
    cfg.seed = seed_override(cfg.seed)?;

    let ds = synth_dataset(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    save_dataset(&ds, &a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let nodes: usize = ds.graphs.iter().map(SceneGraph::n).sum();
    let edges: usize = ds.graphs.iter().map(SceneGraph::e).sum();
    let mut m = RunManifest::begin("synth", cfg.seed);
    m.config = to_value(&cfg);
    m.dataset_sha256 = Some(hash_of(&a.out)?);
    m.metrics = json!({ "graphs": ds.graphs.len(), "nodes": nodes, "edges": edges });
    write_manifest(m, &sibling_manifest(&a.out))?;

    println!(
        "wrote {} graphs ({nodes} nodes, {edges} edges) to {}",
        ds.graphs.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Optional overrides for the model architecture and the optimiser; any
/// field left out keeps its default. The data schema (vocabulary,
/// directedness, edge weights) always comes from the dataset itself.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSpec {
    order: Option<CompressionOrder>,
    dist: Option<DistKind>,
    hidden: Option<usize>,
    zdim: Option<usize>,
    latent_ch: Option<usize>,
    cdf_hidden: Option<usize>,
    loc_grid: Option<f64>,
    ablate: Option<Ablations>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

impl TrainSpec {
    fn apply(&self, cfg: &mut ModelConfig, tc: &mut TrainConfig) {
        macro_rules! set {
            ($target:expr, $field:expr) => {
                if let Some(v) = $field {
                    $target = v;
                }
            };
        }
        set!(cfg.order, self.order);
        set!(cfg.dist, self.dist);
        set!(cfg.hidden, self.hidden);
        set!(cfg.zdim, self.zdim);
        set!(cfg.latent_ch, self.latent_ch);
        set!(cfg.cdf_hidden, self.cdf_hidden);
        set!(cfg.loc_grid, self.loc_grid);
        set!(cfg.ablate, self.ablate);
        set!(tc.epochs, self.epochs);
        set!(tc.lr, self.lr);
        set!(tc.batch, self.batch);
    }
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let spec = match &a.config {
        Some(path) => read_json::<TrainSpec>(path)?,
        None => TrainSpec::default(),
    };
    let (directed, has_weights) = dataset_schema(&ds)?;
    let seed = seed_override(a.seed)?;

    let mut cfg = ModelConfig::new(ds.vocab.clone(), directed, has_weights);
    let mut tc = TrainConfig { seed, ..TrainConfig::default() };
    spec.apply(&mut cfg, &mut tc);

    let picked: Vec<usize> = match a.split {
        Split::All => (0..ds.graphs.len()).collect(),
        Split::Train => split_indices(ds.graphs.len()).0,
        Split::Test => split_indices(ds.graphs.len()).1,
    };
    if picked.is_empty() {
        return Err(CliError::Data(format!("split {} selects no graphs", a.split)));
    }
    let opts = CompressOptions { preproc: a.preproc, keep_order: false, seed };
    let graphs = picked
        .into_iter()
        .map(|i| preprocess_graph(&ds.graphs[i], &opts).map(|(pre, _)| pre))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut model = Model::init(cfg, seed);
    let report = train(&mut model, &graphs, &tc).map_err(|e| CliError::Data(e.to_string()))?;
    for e in &report.epochs {
        println!("epoch {:>3}: {:.3} bits/node", e.epoch, e.mean_bits_per_node);
    }
    model.save(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let mut m = RunManifest::begin("train", seed);
    m.config = json!({
        "model": model.config,
        "train": tc,
        "preproc": a.preproc.to_string(),
        "split": a.split.to_string(),
    });
    m.dataset_sha256 = Some(hash_of(&a.data)?);
    m.checkpoint_sha256 = Some(hash_of(&a.out)?);
    m.metrics = to_value(&report);
    write_manifest(m, &sibling_manifest(&a.out))?;

    println!("wrote checkpoint {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compress / decompress

fn compress_cmd(a: CompressArgs) -> Result<(), CliError> {
    let model = load_model(&a.ckpt)?;
    let ds = load_data(&a.input)?;
    let seed = seed_override(a.seed)?;
    let opts = CompressOptions { preproc: a.preproc, keep_order: a.keep_order, seed };

    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let start = Instant::now();
    let compressed: Vec<_> =
        ds.graphs.par_iter().map(|g| compress_graph(&model, g, &opts)).collect();

    let mut rows = Vec::with_capacity(compressed.len());
    for (idx, result) in compressed.into_iter().enumerate() {
        let c = result.map_err(|e| CliError::Data(format!("graph {idx}: {e}")))?;
        let path = a.out.join(format!("g{idx:06}.sgz1"));
        std::fs::write(&path, &c.bytes)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.push(measure(&c.frame, &ds.graphs[idx], c.cir.as_f64()));
    }
    let agg = aggregate(&rows, start.elapsed().as_secs_f64());

    let mut m = RunManifest::begin("compress", seed);
    m.config = json!({
        "preproc": a.preproc.to_string(),
        "keep_order": a.keep_order,
        "model": model.config,
    });
    m.checkpoint_sha256 = Some(hash_of(&a.ckpt)?);
    m.dataset_sha256 = Some(hash_of(&a.input)?);
    m.metrics = to_value(&agg);
    write_manifest(m, &a.out.join("manifest.json"))?;

    println!(
        "compressed {} graphs: {} -> {} bits (ratio {:.4}) in {}",
        agg.graphs,
        agg.raw_bits,
        agg.total_bits,
        agg.pooled_ratio,
        a.out.display()
    );
    Ok(())
}

fn decompress_cmd(a: DecompressArgs) -> Result<(), CliError> {
    let model = load_model(&a.ckpt)?;
    let entries = std::fs::read_dir(&a.input)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sgz1"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .sgz1 files in {}", a.input.display())));
    }

    let graphs = files
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            decompress_graph(&model, &bytes)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let count = graphs.len();
    let ds = Dataset { vocab: model.config.vocab.clone(), graphs };
    save_dataset(&ds, &a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;

    let mut m = RunManifest::begin("decompress", 0);
    m.checkpoint_sha256 = Some(hash_of(&a.ckpt)?);
    m.dataset_sha256 = Some(hash_of(&a.out)?);
    m.metrics = json!({ "graphs": count });
    write_manifest(m, &sibling_manifest(&a.out))?;

    println!("decoded {count} graphs to {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

/// Which part of a dataset a command operates on; `train`/`test` use the
/// same seed-stable split the training command holds out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected all, train or test)")),
        }
    }
}

fn parse_ablate(spec: &str) -> Result<Ablations, CliError> {
    let items = spec.strip_prefix("context=").ok_or_else(|| {
        CliError::Usage(format!("--ablate expects context=<list>, got '{spec}'"))
    })?;
    let mut a = Ablations::none();
    if items == "none" {
        return Ok(a);
    }
    for item in items.split(',') {
        match item {
            "node" => a.node_context = true,
            "structure" => a.structure_context = true,
            "edge" => a.edge_context = true,
            "all" => a = Ablations::all(),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown context '{other}' (expected node, structure, edge, all or none)"
                )))
            }
        }
    }
    Ok(a)
}

fn ablate_label(a: Ablations) -> String {
    let mut parts = Vec::new();
    if a.node_context {
        parts.push("node");
    }
    if a.structure_context {
        parts.push("structure");
    }
    if a.edge_context {
        parts.push("edge");
    }
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join("+")
    }
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let mut model = load_model(&a.ckpt)?;
    let ds = load_data(&a.data)?;

    if let Some(dist) = a.dist {
        if dist != model.config.dist {
            return Err(CliError::Usage(format!(
                "checkpoint was trained with --dist {}; evaluating it as {dist} would \
                 misread its parameters",
                model.config.dist
            )));
        }
    }
    if let Some(order) = a.order {
        if order != model.config.order {
            return Err(CliError::Usage(format!(
                "checkpoint was trained with --order {}; it cannot decode {order} streams",
                model.config.order
            )));
        }
    }
    if let Some(spec) = &a.ablate {
        model.config.ablate = parse_ablate(spec)?;
    }

    let picked: Vec<usize> = match a.split {
        Split::All => (0..ds.graphs.len()).collect(),
        Split::Train => split_indices(ds.graphs.len()).0,
        Split::Test => split_indices(ds.graphs.len()).1,
    };
    if picked.is_empty() {
        return Err(CliError::Data(format!("split {} selects no graphs", a.split)));
    }
    let graphs: Vec<SceneGraph> = picked.into_iter().map(|i| ds.graphs[i].clone()).collect();

    let seed = seed_override(a.seed)?;
    let opts = CompressOptions { preproc: a.preproc, keep_order: false, seed };
    let out = evaluate(&model, &graphs, &opts).map_err(|e| CliError::Data(e.to_string()))?;

    let baseline = match a.baseline.as_deref() {
        None => None,
        Some("deflate") => Some(deflate_baseline(&graphs)),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown baseline '{other}' (expected deflate)"
            )))
        }
    };

    let label = format!(
        "split={} dist={} order={} preproc={} ablate={}",
        a.split,
        model.config.dist,
        model.config.order,
        a.preproc,
        ablate_label(model.config.ablate),
    );
    let row = ReportRow {
        dataset: stem(&a.data),
        label,
        metrics: out.metrics,
        baseline_ratio: baseline.map(|b| b.ratio),
    };
    let csv = csv_report(std::slice::from_ref(&row));

    let agg = &row.metrics;
    println!(
        "graphs {}  raw {} bits  coded {} bits  ratio {:.4}  bits/node {:.2}  cir {:.3}",
        agg.graphs, agg.raw_bits, agg.total_bits, agg.pooled_ratio, agg.mean_bits_per_node,
        agg.mean_cir
    );
    if let Some(b) = baseline {
        println!("baseline deflate: ratio {:.4}", b.ratio);
    }

    match &a.report {
        None => print!("{csv}"),
        Some(path) => {
            std::fs::write(path, &csv)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let mut m = RunManifest::begin("eval", seed);
            m.config = json!({
                "split": a.split.to_string(),
                "preproc": a.preproc.to_string(),
                "ablate": ablate_label(model.config.ablate),
                "baseline": a.baseline,
                "model": model.config,
            });
            m.checkpoint_sha256 = Some(hash_of(&a.ckpt)?);
            m.dataset_sha256 = Some(hash_of(&a.data)?);
            m.metrics = json!({ "aggregate": row.metrics, "baseline": baseline });
            write_manifest(m, &sibling_manifest(path))?;
            println!("wrote report {}", path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

fn verify_cmd(a: VerifyArgs) -> Result<(), CliError> {
    let model = load_model(&a.ckpt)?;
    let ds = load_data(&a.data)?;

    let (directed, has_weights) = dataset_schema(&ds)?;
    let cfg = &model.config;
    if cfg.t_o() != ds.vocab.objects.len() || cfg.t_r() != ds.vocab.relations.len() {
        return Err(CliError::Data(format!(
            "vocabulary mismatch: checkpoint expects {}/{} types, dataset has {}/{}",
            cfg.t_o(),
            cfg.t_r(),
            ds.vocab.objects.len(),
            ds.vocab.relations.len()
        )));
    }
    if cfg.directed != directed || (has_weights && !cfg.has_weights) {
        return Err(CliError::Data(
            "dataset schema (directedness or edge weights) does not match the checkpoint".into(),
        ));
    }

    let opts = CompressOptions { preproc: a.preproc, keep_order: false, seed: 0 };
    let failures: Vec<String> = ds
        .graphs
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            verify_graph(&model, g, &opts, a.mutations, 0x5EED ^ i as u64)
                .err()
                .map(|e| format!("graph {i}: {e}"))
        })
        .collect();
    if let Some(first) = failures.first() {
        return Err(CliError::Verify(format!(
            "{first} ({} of {} graphs failed)",
            failures.len(),
            ds.graphs.len()
        )));
    }

    println!(
        "verified {} graphs: roundtrips are lossless and every symbol's table \
         depends only on already-decoded data",
        ds.graphs.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared helpers

fn seed_override(flag: u64) -> Result<u64, CliError> {
    match std::env::var("SGZ_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Usage(format!("SGZ_SEED must be an unsigned integer, got '{text}'"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(CliError::Usage(format!("SGZ_SEED: {e}"))),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn dataset_schema(ds: &Dataset) -> Result<(bool, bool), CliError> {
    let Some(first) = ds.graphs.first() else {
        return Err(CliError::Data("dataset has no graphs".into()));
    };
    let directed = first.directed;
    if ds.graphs.iter().any(|g| g.directed != directed) {
        return Err(CliError::Data("dataset mixes directed and undirected graphs".into()));
    }
    let has_weights = ds.graphs.iter().any(SceneGraph::has_weights);
    if has_weights && ds.graphs.iter().any(|g| g.e() > 0 && !g.has_weights()) {
        return Err(CliError::Data("dataset mixes weighted and unweighted graphs".into()));
    }
    Ok((directed, has_weights))
}

fn hash_of(path: &Path) -> Result<String, CliError> {
    sha256_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_manifest(m: RunManifest, path: &Path) -> Result<(), CliError> {
    m.write(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `out.csv` gets its manifest at `out.csv.manifest.json`.
fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn to_value<T: Serialize>(t: &T) -> serde_json::Value {
    serde_json::to_value(t).expect("value serialization cannot fail")
}
