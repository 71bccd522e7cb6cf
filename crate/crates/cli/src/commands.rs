use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;

use matgraph::catalog::MaterialCatalog;
use matgraph::checkpoint::{Checkpoint, TrainingMeta};
use matgraph::corpus::{ingest_dir, load_records, save_records, BuildOptions, Corpus};
use matgraph::encoding::EmbeddingTable;
use matgraph::experiments::{run_on_corpus, write_outputs, ExperimentManifest, GridAxes, Protocol};
use matgraph::graph::{AssemblyGraph, Guidance};
use matgraph::model::{LayerKind, ModelConfig};
use matgraph::split::SplitManifest;
use matgraph::synth::{self, generate, SynthConfig, SynthKind};
use matgraph::training::{evaluate, report_rows, train, write_metrics_csv, TrainConfig, TrainData, WeightMode};
use matgraph_serve::AppState;

use crate::args::*;
use crate::error::CliError;

pub const RECORDS_FILE: &str = "records.json";
pub const INGEST_REPORT_FILE: &str = "ingest.json";
pub const CORPUS_DIR: &str = "corpus";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

type Result<T> = std::result::Result<T, CliError>;

/// Required input: the flag value or its default, which must exist.
fn input(flag: &'static str, given: &Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
    let path = given.clone().unwrap_or(default);
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingPath { flag, path })
    }
}

/// Optional input: a given path must exist, a missing default is skipped.
fn optional(flag: &'static str, given: &Option<PathBuf>, default: PathBuf) -> Result<Option<PathBuf>> {
    match given {
        Some(_) => input(flag, given, default).map(Some),
        None => Ok(default.exists().then_some(default)),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| matgraph::Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| matgraph::Error::io(path, e).into())
}

fn corpus_dir(cli: &Cli, args: &CorpusArgs) -> Result<PathBuf> {
    input("--corpus", &args.corpus, cli.out_dir.join(CORPUS_DIR))
}

fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let mut m = ModelConfig::new(1, 1);
    m.num_layers = args.layers;
    m.hidden = args.hidden;
    m.layer_kind = LayerKind::parse(&args.layer_kind).map_err(|e| CliError::Usage(format!("--layer-kind: {e}")))?;
    Ok(m)
}

fn train_config(args: &ModelArgs, runs: usize) -> Result<TrainConfig> {
    let weight_mode = match args.weight_mode.as_str() {
        "inverse_frequency" => WeightMode::InverseFrequency,
        "uniform" => WeightMode::Uniform,
        other => return Err(CliError::Usage(format!("--weight-mode: unknown mode {other:?}"))),
    };
    Ok(TrainConfig {
        epochs: args.epochs,
        patience: args.patience,
        batch_size: args.batch_size,
        runs,
        lr: args.lr,
        weight_mode,
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth_cmd(cli, a),
        Command::Ingest(a) => ingest_cmd(cli, a),
        Command::BuildGraphs(a) => build_cmd(cli, a),
        Command::Stats(a) => {
            let m = ExperimentManifest::desk(Protocol::Stats, corpus_dir(cli, a)?, cli.out_dir.join("stats"));
            protocol_cmd(cli, m)
        }
        Command::Train(a) => train_cmd(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::Ablate(a) => {
            let mut m = manifest(cli, Protocol::Ablation, &a.corpus, &a.model, a.run.runs, "ablation")?;
            m.grid.ks = a.run.k.clone();
            m.grid.blocks = a.blocks.clone();
            m.grid.edge_modes = a.edge_modes.clone();
            protocol_cmd(cli, m)
        }
        Command::Experiment(a) => experiment_cmd(cli, a),
        Command::Grid(a) => {
            let mut m = manifest(cli, Protocol::Grid, &a.corpus, &a.model, a.runs, "grid")?;
            m.grid.layers = a.grid_layers.clone();
            m.grid.hidden = a.grid_hidden.clone();
            m.grid.kinds = a
                .grid_kinds
                .iter()
                .map(|k| LayerKind::parse(k))
                .collect::<matgraph::Result<_>>()
                .map_err(|e| CliError::Usage(format!("--grid-kinds: {e}")))?;
            protocol_cmd(cli, m)
        }
        Command::Serve(a) => serve_cmd(a),
    }
}

fn synth_cmd(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let kind = match a.kind {
        SynthKindArg::Planted => SynthKind::Planted,
        SynthKindArg::Homophily => SynthKind::Homophily,
        SynthKindArg::Taxonomy => SynthKind::Taxonomy,
    };
    let config = SynthConfig {
        semantic_dim: a.semantic_dim,
        visual_dim: a.visual_dim,
        test_fraction: a.test_fraction,
        ..SynthConfig::new(kind, a.graphs, cli.seed)
    };
    let corpus = generate(&config)?;
    corpus.write(&cli.out_dir)?;
    println!(
        "{} corpus: {} assemblies, {} test ids, written to {}",
        kind.name(),
        corpus.assemblies.len(),
        corpus.split.test_ids.len(),
        cli.out_dir.display()
    );
    Ok(())
}

fn ingest_cmd(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let dir = input("--assemblies", &a.assemblies, cli.out_dir.join(synth::ASSEMBLY_DIR))?;
    let catalog = MaterialCatalog::load(input("--catalog", &a.catalog, cli.out_dir.join(synth::CATALOG_FILE))?)?;
    let (records, report) = ingest_dir(&dir, &catalog)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| matgraph::Error::io(&cli.out_dir, e))?;
    save_records(&cli.out_dir.join(RECORDS_FILE), &records)?;
    write(&cli.out_dir.join(INGEST_REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    println!(
        "files {}, kept {}, dropped {} (all default material), failed {}",
        report.files,
        report.kept.len(),
        report.dropped_default.len(),
        report.failed.len()
    );
    Ok(())
}

fn build_options(path: Option<PathBuf>) -> Result<BuildOptions> {
    let Some(path) = path else { return Ok(BuildOptions::default()) };
    let text = std::fs::read_to_string(&path).map_err(|e| matgraph::Error::io(&path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("options") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value)?)
}

fn build_cmd(cli: &Cli, a: &BuildArgs) -> Result<()> {
    let out = &cli.out_dir;
    let records = load_records(&input("--records", &a.records, out.join(RECORDS_FILE))?)?;
    let catalog = MaterialCatalog::load(input("--catalog", &a.catalog, out.join(synth::CATALOG_FILE))?)?;
    let semantic = EmbeddingTable::load(input("--semantic", &a.semantic, out.join(synth::SEMANTIC_FILE))?)?;
    let visual = match &a.visual {
        Some(_) => Some(EmbeddingTable::load(input("--visual", &a.visual, PathBuf::new())?)?),
        None => None,
    };
    let split = match optional("--split", &a.split, out.join(synth::SPLIT_FILE))? {
        Some(p) => SplitManifest::load(p)?,
        None => {
            warn!("no split manifest; the corpus has no test set");
            SplitManifest::new(cli.seed, Vec::new())
        }
    };
    let options = build_options(optional("--options", &a.options, out.join(synth::SYNTH_FILE))?)?;
    let corpus = Corpus::build(&records, &catalog, &semantic, visual.as_ref(), &split, &options)?;
    let dir = out.join(CORPUS_DIR);
    corpus.save(&dir)?;
    semantic.save(dir.join(synth::SEMANTIC_FILE))?;
    let s = &corpus.manifest.split;
    println!(
        "{} graphs ({} train, {} val, {} test), {} dropped, {} classes, node width {}",
        corpus.graphs.len(),
        s.train.len(),
        s.val.len(),
        s.test.len(),
        corpus.manifest.dropped.len(),
        corpus.num_classes(),
        corpus.manifest.schema.node_width()
    );
    Ok(())
}

fn guided(graphs: Vec<AssemblyGraph>, guide: &Guidance, corpus: &Corpus, seed: u64) -> Result<Vec<AssemblyGraph>> {
    let m = &corpus.manifest;
    graphs
        .iter()
        .map(|g| guide.apply(g, &m.fitted, &m.catalog, seed))
        .collect::<matgraph::Result<_>>()
        .map_err(Into::into)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    if a.tier_depth > 3 {
        return Err(CliError::Usage("--tier-depth: must lie in 0..=3".into()));
    }
    if !(0.0..1.0).contains(&a.context_ratio) {
        return Err(CliError::Usage("--context-ratio: must lie in [0, 1)".into()));
    }
    let dir = corpus_dir(cli, &a.corpus)?;
    let corpus = Corpus::load(&dir)?;
    let guide = Guidance {
        context_ratio: a.context_ratio,
        tier_depth: a.tier_depth,
    };
    let train_graphs = guided(corpus.train(), &guide, &corpus, cli.seed)?;
    let val_graphs = guided(corpus.val(), &guide, &corpus, cli.seed)?;
    let first = train_graphs
        .first()
        .ok_or_else(|| matgraph::Error::Config("empty training split".into()))?;
    let mc = ModelConfig {
        input_dim: first.width(),
        num_classes: corpus.num_classes(),
        ..model_config(&a.model)?
    };
    let cfg = train_config(&a.model, 1)?;
    let data = TrainData {
        train: &train_graphs,
        val: &val_graphs,
    };
    let (model, history) = train(&mc, &cfg, data, cli.seed)?;
    let meta = TrainingMeta {
        train_config: cfg,
        seed: cli.seed,
        best_epoch: history.best_epoch,
        best_val_micro_f1: history.best_val_micro_f1,
        epochs_run: history.epochs.len(),
        guidance: guide,
    };
    let mut ck = Checkpoint::from_model(
        &model,
        first.schema.clone(),
        corpus.manifest.fitted.clone(),
        Some(corpus.manifest.catalog.clone()),
        Some(meta),
    );
    let semantic = dir.join(synth::SEMANTIC_FILE);
    if semantic.exists() {
        ck = ck.with_semantic(EmbeddingTable::load(&semantic)?);
    } else {
        warn!("corpus has no {}; the checkpoint will only accept graph bundles", synth::SEMANTIC_FILE);
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| matgraph::Error::io(&cli.out_dir, e))?;
    ck.save(cli.out_dir.join(CHECKPOINT_FILE))?;
    write(&cli.out_dir.join(HISTORY_FILE), history.to_csv())?;
    println!(
        "checkpoint {} ({} epochs, best epoch {}, val micro-F1 {:.4})",
        ck.id(),
        history.epochs.len(),
        history.best_epoch,
        history.best_val_micro_f1
    );
    Ok(())
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let corpus = Corpus::load(&corpus_dir(cli, &a.corpus)?)?;
    let ck_path = input("--checkpoint", &a.checkpoint, cli.out_dir.join(CHECKPOINT_FILE))?;
    let ck = Checkpoint::load(&ck_path)?;
    let model = ck.model()?;
    if ck.meta.labels != corpus.manifest.fitted.labels {
        return Err(matgraph::Error::Schema("checkpoint classes differ from the corpus classes".into()).into());
    }
    let (guide, seed) = ck.meta.training.as_ref().map_or((Guidance::default(), cli.seed), |t| (t.guidance, t.seed));
    let (name, graphs) = match a.split {
        SplitArg::Train => ("train", corpus.train()),
        SplitArg::Val => ("val", corpus.val()),
        SplitArg::Test => ("test", corpus.test()),
    };
    let graphs = guided(graphs, &guide, &corpus, seed)?;
    if graphs.is_empty() {
        return Err(matgraph::Error::Config(format!("the {name} split is empty")).into());
    }
    if graphs[0].schema != ck.meta.schema {
        return Err(matgraph::Error::Schema(format!(
            "corpus schema {} does not match checkpoint schema {}",
            graphs[0].schema.hash(),
            ck.meta.schema.hash()
        ))
        .into());
    }
    let report = evaluate(&model, &graphs, &a.k)?;
    let rows = report_rows("evaluate", 0, seed, name, &report);
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &rows)?;
    write(&cli.out_dir.join(matgraph::experiments::METRICS_FILE), csv)?;
    let doc = json!({
        "checkpoint": ck.id(),
        "split": name,
        "graphs": graphs.len(),
        "report": report,
    });
    write(&cli.out_dir.join(matgraph::experiments::REPORT_FILE), serde_json::to_string_pretty(&doc)?)?;
    println!("{name}: {} nodes, micro-F1 {:.4}, weighted-F1 {:.4}", report.nodes, report.micro_f1, report.weighted_f1);
    for t in &report.top_k {
        println!("top-{}: micro {:.4}, weighted {:.4}", t.k, t.micro_f1, t.weighted_f1);
    }
    Ok(())
}

fn manifest(cli: &Cli, protocol: Protocol, corpus: &CorpusArgs, model: &ModelArgs, runs: usize, sub: &str) -> Result<ExperimentManifest> {
    let mut m = ExperimentManifest::desk(protocol, corpus_dir(cli, corpus)?, cli.out_dir.join(sub));
    m.model = model_config(model)?;
    m.train = train_config(model, runs)?;
    m.seed = cli.seed;
    m.grid = GridAxes::default();
    Ok(m)
}

fn experiment_cmd(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let protocol = match a.protocol {
        ProtocolArg::Fully => Protocol::Fully,
        ProtocolArg::Partial => Protocol::Partial,
        ProtocolArg::User => Protocol::User,
    };
    if let Some(path) = &a.manifest {
        let path = input("--manifest", &a.manifest, path.clone())?;
        let m = ExperimentManifest::load(&path)?;
        if m.protocol != protocol {
            return Err(CliError::Usage(format!(
                "--manifest: describes a {} experiment, not {}",
                m.protocol.name(),
                protocol.name()
            )));
        }
        if !m.corpus.exists() {
            return Err(CliError::MissingPath {
                flag: "--manifest",
                path: m.corpus,
            });
        }
        return protocol_cmd(cli, m);
    }
    let mut m = manifest(cli, protocol, &a.corpus, &a.model, a.run.runs, protocol.name())?;
    m.grid.ks = a.run.k.clone();
    m.grid.ratios = a.ratios.clone();
    m.grid.layers = a.layer_sweep.clone();
    m.grid.depths = a.depths.clone();
    protocol_cmd(cli, m)
}

fn protocol_cmd(cli: &Cli, m: ExperimentManifest) -> Result<()> {
    let corpus = Corpus::load(&m.corpus)?;
    info!("{} protocol on {} graphs", m.protocol.name(), corpus.graphs.len());
    let out = run_on_corpus(&m, &corpus, cli.jobs)?;
    write_outputs(&m.out_dir, &m, &out)?;
    // a closed pipe (e.g. `| head`) is not an error
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}\nwritten to {}\n", out.markdown, m.out_dir.display());
    Ok(())
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let checkpoint = match &a.checkpoint {
        Some(p) => Some(input("--checkpoint", &a.checkpoint, p.clone())?),
        None => None,
    };
    let catalog = match &a.catalog {
        Some(p) => Some(input("--catalog", &a.catalog, p.clone())?),
        None => None,
    };
    let state = AppState::from_paths(checkpoint.as_deref(), catalog.as_deref())?;
    matgraph_serve::run(a.port, state)?;
    Ok(())
}
