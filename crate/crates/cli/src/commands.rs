use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use flowgraph::corpus::{
    filter_with, load_document, prepare_document, read_manifest, split_dataset, stats_report, write_annotations,
    write_manifest, Document, ManifestEntry,
};
use flowgraph::dot::to_dot;
use flowgraph::encoder::{load_embeddings, EmbeddingMatrix, FeatureSource};
use flowgraph::eval::{config_hash, random_baseline, write_curve_csv, BaselineMode, EvalReport, ThresholdMetrics};
use flowgraph::graph::{enumerate_candidates, Edge, WindowPolicy};
use flowgraph::model::{
    stc_labels, stc_train_eval, train, AnyCheckpoint, Checkpoint, CheckpointMeta, ClassWeights, EpochRecord,
    Prediction, Sample, TrainConfig,
};
use flowgraph::synth::generate;
use flowgraph::tensor::{Precision, Scalar};
use flowgraph::{Error, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{FileConfig, GlobalArgs};
use crate::run::{check_id, corpus_split, create_dir, load_corpus, manifest_path, select, Run, MANIFEST_FILE, SPLIT_FILE};

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, filter and validate an annotated corpus into canonical JSON.
    Prepare(PrepareArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Train an edge model and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Write predicted flow graphs.
    Predict(PredictArgs),
    /// Render one document as a Graphviz digraph.
    ExportDot(ExportDotArgs),
    /// Print the shape and trailer of an embedding file.
    Inspect(InspectArgs),
    /// Train and score the sentence type classifier.
    Stc(StcArgs),
}

pub fn run(global: &GlobalArgs, command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(global, &a),
        Command::Stats(a) => stats(global, &a),
        Command::Synth(a) => synth(global, &a),
        Command::Train(a) => train_cmd(global, &a),
        Command::Eval(a) => eval(global, &a),
        Command::Predict(a) => predict(global, &a),
        Command::ExportDot(a) => export_dot(global, &a),
        Command::Inspect(a) => inspect(global, &a),
        Command::Stc(a) => stc(global, &a),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PrepareArgs {
    /// JSON manifest listing `{id, path}` entries.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also drop code sentences.
    #[arg(long)]
    pub drop_code: bool,
}

#[derive(Serialize)]
struct Reject {
    id: String,
    reason: String,
}

fn prepare(global: &GlobalArgs, args: &PrepareArgs) -> Result<()> {
    let mut config = FileConfig::resolve(global)?;
    config.filter.drop_code |= args.drop_code;
    let entries = read_manifest(&manifest_path(&args.manifest))?;
    if entries.is_empty() {
        return Err(Error::Empty("corpus manifest"));
    }
    let mut run = Run::start("prepare", &global.out);
    run.input(&manifest_path(&args.manifest));
    let results: Vec<Result<Document>> = entries
        .par_iter()
        .map(|e| {
            check_id(&e.id)?;
            prepare_document(&load_document(&e.id, &e.path)?, config.filter)
        })
        .collect();

    let mut docs = Vec::new();
    let mut rejects = Vec::new();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(doc) => docs.push(doc),
            Err(e) => {
                warn!("rejected {}: {e}", entry.id);
                rejects.push(Reject {
                    id: entry.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let mut seen = BTreeSet::new();
    docs.retain(|d| {
        let fresh = seen.insert(d.id().to_string());
        if !fresh {
            rejects.push(Reject {
                id: d.id().to_string(),
                reason: "duplicate document id".into(),
            });
        }
        fresh
    });
    run.write_json(&global.out.join("rejects.json"), &rejects)?;
    if docs.is_empty() {
        return Err(Error::validation(format!("all {} documents were rejected", entries.len())));
    }

    let files = docs
        .iter()
        .map(|d| Ok((global.out.join("docs").join(format!("{}.json", d.id())), d.to_json()? + "\n")))
        .collect::<Result<Vec<_>>>()?;
    write_parallel(&mut run, &files)?;
    let manifest: Vec<ManifestEntry> = docs
        .iter()
        .map(|d| ManifestEntry {
            id: d.id().to_string(),
            path: Path::new("docs").join(format!("{}.json", d.id())),
        })
        .collect();
    let manifest_out = global.out.join(MANIFEST_FILE);
    write_manifest(&manifest_out, &manifest)?;
    run.record_output(&manifest_out);
    let ids: Vec<String> = docs.iter().map(|d| d.id().to_string()).collect();
    run.write_json(&global.out.join(SPLIT_FILE), &split_dataset(&ids, config.seed)?)?;
    info!("prepared {} documents, rejected {}", docs.len(), rejects.len());
    run.finish(&config, args, config.seed)
}

fn write_parallel<C: AsRef<[u8]> + Sync>(run: &mut Run, files: &[(PathBuf, C)]) -> Result<()> {
    let dirs: BTreeSet<&Path> = files.iter().filter_map(|(p, _)| p.parent()).collect();
    for dir in dirs {
        create_dir(dir)?;
    }
    files
        .par_iter()
        .map(|(path, bytes)| std::fs::write(path, bytes).map_err(|e| Error::io(path, e)))
        .collect::<Result<()>>()?;
    for (path, _) in files {
        run.record_output(path);
    }
    Ok(())
}

/// Prints to stdout; a closed pipe is not an error.
fn print_json<S: Serialize>(value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    /// Corpus directory or manifest.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Count every sentence, skipping the relevance filter.
    #[arg(long)]
    pub raw: bool,
}

fn stats(global: &GlobalArgs, args: &StatsArgs) -> Result<()> {
    let config = FileConfig::resolve(global)?;
    let mut run = Run::start("stats", &global.out);
    run.input(&manifest_path(&args.corpus));
    let mut docs = load_corpus(&args.corpus)?;
    if !args.raw {
        let before = docs.len();
        docs = docs
            .iter()
            .map(|d| filter_with(d, config.filter))
            .filter(|d| d.len() >= 2)
            .collect();
        if docs.len() < before {
            warn!("{} documents have fewer than two relevant sentences", before - docs.len());
        }
    }
    if docs.is_empty() {
        return Err(Error::Empty("corpus after filtering"));
    }
    let report = stats_report(&docs);
    print_json(&report.stats)?;
    run.write_json(&global.out.join("stats.json"), &report)?;
    run.finish(&config, args, config.seed)
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Chance of each non-adjacent forward pair becoming a gold edge.
    #[arg(long)]
    pub skip_probability: Option<f64>,
    #[arg(long)]
    pub rare_vocab: Option<usize>,
    #[arg(long)]
    pub common_vocab: Option<usize>,
    #[arg(long)]
    pub tokens_per_edge: Option<usize>,
}

fn synth(global: &GlobalArgs, args: &SynthArgs) -> Result<()> {
    let mut config = FileConfig::resolve(global)?;
    let s = &mut config.synth;
    s.docs = args.docs.unwrap_or(s.docs);
    s.min_size = args.min_size.unwrap_or(s.min_size);
    s.max_size = args.max_size.unwrap_or(s.max_size);
    s.skip_probability = args.skip_probability.unwrap_or(s.skip_probability);
    s.rare_vocab = args.rare_vocab.unwrap_or(s.rare_vocab);
    s.common_vocab = args.common_vocab.unwrap_or(s.common_vocab);
    s.tokens_per_edge = args.tokens_per_edge.unwrap_or(s.tokens_per_edge);
    let docs = generate(&config.synth)?;
    let mut run = Run::start("synth", &global.out);
    let files = docs
        .par_iter()
        .map(|d| {
            let mut csv = Vec::new();
            write_annotations(d, &mut csv)?;
            Ok((global.out.join("docs").join(format!("{}.csv", d.id())), csv))
        })
        .collect::<Result<Vec<_>>>()?;
    write_parallel(&mut run, &files)?;
    let manifest: Vec<ManifestEntry> = docs
        .iter()
        .map(|d| ManifestEntry {
            id: d.id().to_string(),
            path: Path::new("docs").join(format!("{}.csv", d.id())),
        })
        .collect();
    let manifest_out = global.out.join(MANIFEST_FILE);
    write_manifest(&manifest_out, &manifest)?;
    run.record_output(&manifest_out);
    info!("generated {} documents", docs.len());
    run.finish(&config, args, config.seed)
}

/// Loads a corpus and applies the relevance filter, failing on the first
/// document that does not survive it.
fn load_prepared(corpus: &Path, config: &FileConfig) -> Result<Vec<Document>> {
    load_corpus(corpus)?
        .iter()
        .map(|d| prepare_document(d, config.filter))
        .collect()
}

fn build_samples(docs: &[&Document], source: &FeatureSource) -> Result<Vec<Sample>> {
    docs.par_iter()
        .map(|&d| {
            Ok(Sample {
                doc: d.clone(),
                features: source.features_for(d)?,
            })
        })
        .collect()
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Prepared corpus directory or manifest.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of steps spent warming up.
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `balanced` or `w0,w1`.
    #[arg(long)]
    pub class_weights: Option<String>,
    #[arg(long)]
    pub head_dropout: Option<f64>,
    #[arg(long)]
    pub gnn_dropout: Option<f64>,
    /// Aggregate over undirected neighbourhoods.
    #[arg(long)]
    pub symmetrize: bool,
    /// Window of the graph the GNN aggregates over, if not the candidate window.
    #[arg(long)]
    pub structure_window: Option<String>,
}

fn parse_class_weights(s: &str) -> Result<ClassWeights> {
    if s == "balanced" {
        return Ok(ClassWeights::Balanced);
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad class weights '{s}', expected balanced or w0,w1")))?;
    match parts[..] {
        [w0, w1] => Ok(ClassWeights::Fixed([w0, w1])),
        _ => Err(Error::Config(format!("bad class weights '{s}', expected balanced or w0,w1"))),
    }
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainConfig) -> Result<()> {
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.learning_rate = self.lr.unwrap_or(t.learning_rate);
        t.warmup_fraction = self.warmup.unwrap_or(t.warmup_fraction);
        t.optimizer.weight_decay = self.weight_decay.unwrap_or(t.optimizer.weight_decay);
        if let Some(w) = &self.class_weights {
            t.class_weights = parse_class_weights(w)?;
        }
        t.model.head_dropout = self.head_dropout.unwrap_or(t.model.head_dropout);
        t.model.gnn.dropout = self.gnn_dropout.unwrap_or(t.model.gnn.dropout);
        t.model.gnn.symmetrize |= self.symmetrize;
        if let Some(w) = &self.structure_window {
            t.model.structure_window = Some(w.parse::<WindowPolicy>()?);
        }
        t.validate()
    }
}

#[derive(Serialize)]
struct TrainHistory {
    epochs: Vec<EpochRecord>,
    class_weights: [f64; 2],
    best_epoch: Option<usize>,
    best_validation_prauc: Option<f64>,
}

fn train_at<T: Scalar>(
    train_set: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
) -> Result<(AnyCheckpoint, Vec<EpochRecord>, [f64; 2])>
where
    AnyCheckpoint: From<Checkpoint<T>>,
{
    let outcome = train::<T>(train_set, validation, config)?;
    Ok((outcome.checkpoint.into(), outcome.history, outcome.class_weights))
}

fn train_cmd(global: &GlobalArgs, args: &TrainArgs) -> Result<()> {
    let mut config = FileConfig::resolve(global)?;
    args.apply(&mut config.train)?;
    let source = config.feature_source()?;
    let mut run = Run::start("train", &global.out);
    run.input(&manifest_path(&args.corpus));
    let docs = load_prepared(&args.corpus, &config)?;
    let split = corpus_split(&args.corpus, &docs, config.seed)?;
    if split.validation.is_empty() {
        return Err(Error::validation("validation split is empty; the corpus is too small"));
    }
    let train_set = build_samples(&select(&docs, &split.train)?, &source)?;
    let validation = build_samples(&select(&docs, &split.validation)?, &source)?;
    info!(
        "training on {} documents, validating on {}",
        train_set.len(),
        validation.len()
    );
    let (mut checkpoint, history, class_weights) = match config.train.model.precision {
        Precision::F32 => train_at::<f32>(&train_set, &validation, &config.train)?,
        Precision::F64 => train_at::<f64>(&train_set, &validation, &config.train)?,
    };
    checkpoint.meta_mut().features = Some(source);
    let meta = checkpoint.meta().clone();
    info!(
        "best validation PRAUC {:.4} at epoch {}",
        meta.best_validation_prauc.unwrap_or(f64::NAN),
        meta.epoch.unwrap_or(0)
    );
    create_dir(&global.out)?;
    let model_path = global.out.join("model.fgck");
    checkpoint.save(&model_path)?;
    run.record_output(&model_path);
    run.write_json(
        &global.out.join("history.json"),
        &TrainHistory {
            epochs: history,
            class_weights,
            best_epoch: meta.epoch,
            best_validation_prauc: meta.best_validation_prauc,
        },
    )?;
    run.finish(&config, args, config.seed)
}

/// Model flags on the command line must agree with the checkpoint.
fn check_flags(global: &GlobalArgs, config: &FileConfig, meta: &CheckpointMeta) -> Result<()> {
    let m = &config.train.model;
    let mut conflicts = Vec::new();
    if global.window.is_some() && m.window != meta.model.window {
        conflicts.push(format!("window {} vs {}", m.window, meta.model.window));
    }
    if global.structure.is_some() && m.structure != meta.model.structure {
        conflicts.push(format!("structure {:?} vs {:?}", m.structure, meta.model.structure));
    }
    if global.gnn.is_some() && m.gnn.kind != meta.model.gnn.kind {
        conflicts.push(format!("gnn {:?} vs {:?}", m.gnn.kind, meta.model.gnn.kind));
    }
    if global.layers.is_some() && m.gnn.layers != meta.model.gnn.layers {
        conflicts.push(format!("layers {} vs {}", m.gnn.layers, meta.model.gnn.layers));
    }
    if global.precision.is_some() && m.precision != meta.precision {
        conflicts.push(format!("precision {:?} vs {:?}", m.precision, meta.precision));
    }
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "flags conflict with the checkpoint: {}",
            conflicts.join(", ")
        )))
    }
}

/// The flag source when given, else the one recorded at training time.
fn checkpoint_features(global: &GlobalArgs, config: &FileConfig, meta: &CheckpointMeta) -> Result<FeatureSource> {
    match (&global.features, &meta.features) {
        (None, Some(recorded)) => Ok(recorded.clone()),
        _ => config.feature_source(),
    }
}

/// Builds features for every document and checks their width against the
/// checkpoint before anything is written.
fn preflight(docs: &[&Document], source: &FeatureSource, in_dim: usize) -> Result<Vec<Sample>> {
    let samples = build_samples(docs, source)?;
    for s in &samples {
        if s.features.d() != in_dim {
            return Err(Error::validation(format!(
                "document '{}' has {}-dimensional features but the checkpoint expects {in_dim}",
                s.doc.id(),
                s.features.d()
            )));
        }
    }
    Ok(samples)
}

/// `all` or one of the split parts.
fn split_docs<'a>(corpus: &Path, docs: &'a [Document], part: &str, seed: u64) -> Result<Vec<&'a Document>> {
    if part == "all" {
        return Ok(docs.iter().collect());
    }
    let split = corpus_split(corpus, docs, seed)?;
    let ids = split
        .part(part)
        .ok_or_else(|| Error::Config(format!("unknown split '{part}', expected train, validation, test or all")))?;
    if ids.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    select(docs, ids)
}

fn split_seed(config: &FileConfig, global: &GlobalArgs, meta: &CheckpointMeta) -> u64 {
    match (global.seed, &meta.train) {
        (None, Some(t)) => t.seed,
        _ => config.seed,
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, validation, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also report per-document averages.
    #[arg(long)]
    pub per_doc: bool,
    /// Headline precision, recall and F1 at the best-F1 threshold instead of 0.5.
    #[arg(long)]
    pub best_f1: bool,
    /// Write the precision-recall curve as CSV.
    #[arg(long)]
    pub curve: bool,
    /// Add uniform and train-ratio random baselines.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Serialize)]
struct Baselines {
    train_ratio: f64,
    uniform: ThresholdMetrics,
    weighted: ThresholdMetrics,
}

#[derive(Serialize)]
struct EvalOutput {
    split: String,
    threshold: f64,
    #[serde(flatten)]
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    baselines: Option<Baselines>,
}

fn pooled_candidates(docs: &[&Document], window: WindowPolicy) -> Result<(usize, Vec<bool>)> {
    let mut positives = 0;
    let mut labels = Vec::new();
    for d in docs {
        let c = enumerate_candidates(d, window)?;
        positives += c.positives();
        labels.extend(c.labels);
    }
    Ok((positives, labels))
}

fn eval(global: &GlobalArgs, args: &EvalArgs) -> Result<()> {
    let config = FileConfig::resolve(global)?;
    let checkpoint = AnyCheckpoint::load(&args.checkpoint)?;
    let meta = checkpoint.meta().clone();
    check_flags(global, &config, &meta)?;
    let source = checkpoint_features(global, &config, &meta)?;
    let seed = split_seed(&config, global, &meta);
    let docs = load_prepared(&args.corpus, &config)?;
    let chosen = split_docs(&args.corpus, &docs, &args.split, seed)?;
    let samples = preflight(&chosen, &source, meta.in_dim)?;

    let mut report = checkpoint.evaluate(&samples, args.per_doc)?;
    report.config_hash = Some(config_hash(&meta)?);
    let mut threshold = flowgraph::eval::DEFAULT_THRESHOLD;
    if args.best_f1 {
        let b = &report.best_f1;
        threshold = b.threshold;
        (report.f1, report.precision, report.recall, report.counts) = (b.f1, b.precision, b.recall, b.counts);
    }
    let baselines = if args.baseline {
        let train_docs = split_docs(&args.corpus, &docs, "train", seed)?;
        let (pos, train_labels) = pooled_candidates(&train_docs, meta.model.window)?;
        let train_ratio = pos as f64 / train_labels.len() as f64;
        let (_, labels) = pooled_candidates(&chosen, meta.model.window)?;
        Some(Baselines {
            train_ratio,
            uniform: random_baseline(&labels, BaselineMode::Uniform, train_ratio, seed)?,
            weighted: random_baseline(&labels, BaselineMode::Weighted, train_ratio, seed)?,
        })
    } else {
        None
    };
    info!(
        "{}: PRAUC {:.4}, F1 {:.4} at {threshold}, edge ratio {:.4} over {} pairs",
        args.split, report.prauc, report.f1, report.positives_ratio, report.pairs
    );

    let mut run = Run::start("eval", &global.out);
    run.input(&manifest_path(&args.corpus));
    run.input(&args.checkpoint);
    if args.curve {
        create_dir(&global.out)?;
        let path = global.out.join("curve.csv");
        write_curve_csv(&path, &report.curve)?;
        run.record_output(&path);
    }
    let output = EvalOutput {
        split: args.split.clone(),
        threshold,
        report,
        baselines,
    };
    run.write_json(&global.out.join("report.json"), &output)?;
    run.finish(&config, args, seed)
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory or manifest; documents need no gold edges.
    #[arg(long)]
    pub corpus: PathBuf,
    /// train, validation, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Also write a DOT rendering per document.
    #[arg(long)]
    pub dot: bool,
}

fn predict(global: &GlobalArgs, args: &PredictArgs) -> Result<()> {
    let config = FileConfig::resolve(global)?;
    let checkpoint = AnyCheckpoint::load(&args.checkpoint)?;
    let meta = checkpoint.meta().clone();
    check_flags(global, &config, &meta)?;
    let source = checkpoint_features(global, &config, &meta)?;
    let seed = split_seed(&config, global, &meta);
    let docs = load_prepared(&args.corpus, &config)?;
    let chosen = split_docs(&args.corpus, &docs, &args.split, seed)?;
    for d in &chosen {
        check_id(d.id())?;
    }
    let samples = preflight(&chosen, &source, meta.in_dim)?;
    let predictions: Vec<Prediction> = samples
        .par_iter()
        .map(|s| checkpoint.predict(&s.doc, &s.features))
        .collect::<Result<_>>()?;

    let mut run = Run::start("predict", &global.out);
    run.input(&manifest_path(&args.corpus));
    run.input(&args.checkpoint);
    let dir = global.out.join("predictions");
    let mut files = Vec::new();
    for (s, p) in samples.iter().zip(&predictions) {
        files.push((dir.join(format!("{}.json", p.id)), serde_json::to_string_pretty(p)? + "\n"));
        if args.dot {
            let predicted: BTreeSet<Edge> = p.edges.iter().copied().collect();
            let gold = (!s.doc.gold_edges().is_empty()).then(|| s.doc.gold_edges());
            files.push((dir.join(format!("{}.dot", p.id)), to_dot(&s.doc, gold, Some(&predicted))));
        }
    }
    write_parallel(&mut run, &files)?;
    let edges: usize = predictions.iter().map(|p| p.edges.len()).sum();
    info!("predicted {edges} edges over {} documents", predictions.len());
    run.finish(&config, args, seed)
}

#[derive(Args, Debug, Serialize)]
pub struct ExportDotArgs {
    /// Document file: prepared `.json`, annotation `.csv` or raw `.txt`.
    #[arg(long)]
    pub doc: PathBuf,
    /// Prediction JSON written by `predict`.
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    /// Leave the document's gold edges out.
    #[arg(long)]
    pub no_gold: bool,
    /// Output path; defaults to `<out>/<id>.dot`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn read_document(path: &Path) -> Result<Document> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Document::from_json(&text);
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::validation(format!("{}: cannot derive a document id", path.display())))?;
    load_document(id, path)
}

fn export_dot(global: &GlobalArgs, args: &ExportDotArgs) -> Result<()> {
    let config = FileConfig::resolve(global)?;
    let doc = read_document(&args.doc)?;
    let mut run = Run::start("export-dot", &global.out);
    run.input(&args.doc);
    let predicted = match &args.predicted {
        Some(path) => {
            run.input(path);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let p: Prediction = serde_json::from_str(&text)?;
            if p.n != doc.len() {
                return Err(Error::validation(format!(
                    "prediction covers {} sentences but '{}' has {}",
                    p.n,
                    doc.id(),
                    doc.len()
                )));
            }
            if let Some(&(i, j)) = p.edges.iter().find(|&&(i, j)| i >= j || j >= doc.len()) {
                return Err(Error::validation(format!("predicted edge ({i}, {j}) is not a forward edge")));
            }
            Some(p.edges.into_iter().collect::<BTreeSet<Edge>>())
        }
        None => None,
    };
    let gold = (!args.no_gold).then(|| doc.gold_edges());
    let path = match &args.output {
        Some(p) => p.clone(),
        None => {
            check_id(doc.id())?;
            global.out.join(format!("{}.dot", doc.id()))
        }
    };
    run.write(&path, to_dot(&doc, gold, predicted.as_ref()))?;
    run.finish(&config, args, config.seed)
}

#[derive(Args, Debug, Serialize)]
pub struct InspectArgs {
    /// Embedding file.
    pub path: PathBuf,
}

#[derive(Serialize)]
struct Inspection {
    n: usize,
    d: usize,
    trailer: flowgraph::encoder::EmbeddingTrailer,
}

fn inspect(global: &GlobalArgs, args: &InspectArgs) -> Result<()> {
    let config = FileConfig::resolve(global)?;
    let (matrix, trailer) = load_embeddings(&args.path)?;
    let report = Inspection {
        n: matrix.n(),
        d: matrix.d(),
        trailer,
    };
    print_json(&report)?;
    let mut run = Run::start("inspect", &global.out);
    run.input(&args.path);
    run.finish(&config, args, config.seed)
}

#[derive(Args, Debug, Serialize)]
pub struct StcArgs {
    /// Annotated corpus; every sentence type is kept.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated seeds, one run each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

fn stc(global: &GlobalArgs, args: &StcArgs) -> Result<()> {
    let mut config = FileConfig::resolve(global)?;
    if let Some(seeds) = &args.seeds {
        config.stc.seeds = seeds.clone();
    }
    config.stc.epochs = args.epochs.unwrap_or(config.stc.epochs);
    config.stc.learning_rate = args.lr.unwrap_or(config.stc.learning_rate);
    let source = config.feature_source()?;
    let docs = load_corpus(&args.corpus)?;
    let refs: Vec<&Document> = docs.iter().collect();
    let samples = build_samples(&refs, &source)?;
    let parts: Vec<EmbeddingMatrix> = samples.iter().map(|s| s.features.clone()).collect();
    let features = EmbeddingMatrix::concat(&parts)?;
    let stypes: Vec<_> = docs.iter().flat_map(|d| d.sentences().iter().map(|s| s.stype)).collect();
    let report = stc_train_eval(&features, &stc_labels(&stypes), &config.stc)?;
    info!(
        "accuracy {:.4} ± {:.4} over {} seeds (majority class {:.4})",
        report.mean_accuracy,
        report.std_accuracy,
        report.runs.len(),
        report.majority_frequency
    );
    let mut run = Run::start("stc", &global.out);
    run.input(&manifest_path(&args.corpus));
    run.write_json(&global.out.join("stc_report.json"), &report)?;
    run.finish(&config, args, config.seed)
}
