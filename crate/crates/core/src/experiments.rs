//! Experiment protocols over an encoded corpus: fully guided prediction with
//! baselines, partial guidance by context labels, user guidance by tier
//! hints, feature ablation, hyperparameter grid and corpus statistics.
//!
//! Every protocol returns metric rows, a JSON report and a Markdown table;
//! [`write_outputs`] puts them on disk next to the manifest that produced
//! them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineKind};
use crate::corpus::Corpus;
use crate::encoding::blocks;
use crate::error::{Error, Result};
use crate::graph::{
    apply_edge_ablation, apply_node_ablation, validate_graph, AssemblyGraph, Guidance, Validity,
};
use crate::ingest::ConnectionKind;
use crate::metrics::{mean_std, MetricsReport};
use crate::model::{LayerKind, ModelConfig};
use crate::training::{
    evaluate, grid_search, parallel_map, report_rows, train, write_metrics_csv, GridSpace, MetricRow, RunHistory,
    TrainConfig, TrainData,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.md";
pub const HISTORY_DIR: &str = "history";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Fully,
    Partial,
    User,
    Ablation,
    Grid,
    Stats,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Fully => "fully",
            Protocol::Partial => "partial",
            Protocol::User => "user",
            Protocol::Ablation => "ablation",
            Protocol::Grid => "grid",
            Protocol::Stats => "stats",
        }
    }
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_ratios() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5]
}
fn default_layers() -> Vec<usize> {
    vec![3]
}
fn default_depths() -> Vec<usize> {
    vec![0, 1, 2, 3]
}
fn default_blocks() -> Vec<String> {
    let mut v = vec!["none".to_string(), blocks::SEMANTIC_NAMES.to_string()];
    v.extend(blocks::ABLATABLE.iter().map(|s| s.to_string()));
    v
}
fn default_edge_modes() -> Vec<String> {
    vec!["none".into(), "hierarchical".into()]
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_kinds() -> Vec<LayerKind> {
    vec![LayerKind::SageMean]
}

/// Axes swept by the protocols; each protocol reads only the axes it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_blocks")]
    pub blocks: Vec<String>,
    #[serde(default = "default_edge_modes")]
    pub edge_modes: Vec<String>,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<LayerKind>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            ks: default_ks(),
            ratios: default_ratios(),
            layers: default_layers(),
            depths: default_depths(),
            blocks: default_blocks(),
            edge_modes: default_edge_modes(),
            hidden: default_hidden(),
            kinds: default_kinds(),
        }
    }
}

/// Everything needed to rerun an experiment. `model.input_dim` and
/// `model.num_classes` are overwritten from the corpus and its protocol
/// transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub protocol: Protocol,
    pub corpus: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridAxes,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentManifest {
    /// Scaled desk defaults: K=3, hidden 64, 5 runs.
    pub fn desk(protocol: Protocol, corpus: PathBuf, out_dir: PathBuf) -> Self {
        let mut model = ModelConfig::new(1, 1);
        model.num_layers = 3;
        model.hidden = 64;
        Self {
            protocol,
            corpus,
            model,
            train: TrainConfig {
                runs: 5,
                ..TrainConfig::default()
            },
            grid: GridAxes::default(),
            out_dir,
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }

    fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Test metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_micro_f1: f64,
    pub test: MetricsReport,
}

/// One configuration trained over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub input_dim: usize,
    pub graphs: [usize; 3],
    pub runs: Vec<RunRecord>,
    /// `(k, micro, weighted)` summaries across runs.
    pub top_k: Vec<(usize, Summary, Summary)>,
}

impl CellReport {
    pub fn top(&self, k: usize) -> Option<&Summary> {
        self.top_k.iter().find(|t| t.0 == k).map(|t| &t.1)
    }

    pub fn top_weighted(&self, k: usize) -> Option<&Summary> {
        self.top_k.iter().find(|t| t.0 == k).map(|t| &t.2)
    }

    fn summarize(&mut self, ks: &[usize]) {
        self.top_k = ks
            .iter()
            .filter(|&&k| self.runs.iter().all(|r| r.test.top(k).is_some()))
            .map(|&k| {
                let micro: Vec<f64> = self.runs.iter().map(|r| r.test.top(k).expect("checked").micro_f1).collect();
                let weighted: Vec<f64> =
                    self.runs.iter().map(|r| r.test.top(k).expect("checked").weighted_f1).collect();
                (k, Summary::of(&micro), Summary::of(&weighted))
            })
            .collect();
    }

    fn rows(&self) -> Vec<MetricRow> {
        self.runs
            .iter()
            .flat_map(|r| report_rows(&self.name, r.run, r.seed, "test", &r.test))
            .collect()
    }
}

/// Result of one protocol.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub report: serde_json::Value,
    pub markdown: String,
    /// `(file name, csv)` training histories.
    pub histories: Vec<(String, String)>,
}

/// Graphs of one cell, already transformed by the protocol.
struct Prepared {
    train: Vec<AssemblyGraph>,
    val: Vec<AssemblyGraph>,
    test: Vec<AssemblyGraph>,
}

impl Prepared {
    fn map(corpus: &Corpus, f: impl Fn(&AssemblyGraph) -> Result<Option<AssemblyGraph>>) -> Result<Self> {
        let apply = |gs: Vec<AssemblyGraph>| -> Result<Vec<AssemblyGraph>> {
            Ok(gs.iter().map(&f).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
        };
        Ok(Self {
            train: apply(corpus.train())?,
            val: apply(corpus.val())?,
            test: apply(corpus.test())?,
        })
    }

    fn width(&self) -> Result<usize> {
        self.train
            .first()
            .map(AssemblyGraph::width)
            .ok_or_else(|| Error::Config("empty training split".into()))
    }

    fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            val: &self.val,
        }
    }
}

/// A cell description: name, parameters and the per-run graph transform.
struct Cell<'a> {
    name: String,
    params: BTreeMap<String, String>,
    model: ModelConfig,
    prepare: Box<dyn Fn(u64) -> Result<Prepared> + Sync + 'a>,
}

fn params<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn run_cells(cells: &[Cell], cfg: &TrainConfig, seed0: u64, ks: &[usize], jobs: usize) -> Result<Vec<(CellReport, Vec<RunHistory>)>> {
    let pairs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.runs).map(move |r| (c, r))).collect();
    let results = parallel_map(pairs.len(), jobs, |j| -> Result<(usize, RunRecord, RunHistory, [usize; 3])> {
        let (c, run) = pairs[j];
        let cell = &cells[c];
        let seed = seed0 + run as u64;
        let prepared = (cell.prepare)(seed)?;
        let mc = ModelConfig {
            input_dim: prepared.width()?,
            ..cell.model.clone()
        };
        let (model, history) = train(&mc, cfg, prepared.data(), seed)?;
        let test = evaluate(&model, &prepared.test, ks)?;
        let record = RunRecord {
            run,
            seed,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            best_val_micro_f1: history.best_val_micro_f1,
            test,
        };
        let counts = [prepared.train.len(), prepared.val.len(), prepared.test.len()];
        Ok((mc.input_dim, record, history, counts))
    });
    let mut out: Vec<(CellReport, Vec<RunHistory>)> = cells
        .iter()
        .map(|c| {
            (
                CellReport {
                    name: c.name.clone(),
                    params: c.params.clone(),
                    input_dim: 0,
                    graphs: [0; 3],
                    runs: Vec::new(),
                    top_k: Vec::new(),
                },
                Vec::new(),
            )
        })
        .collect();
    for (&(c, _), r) in pairs.iter().zip(results) {
        let (dim, record, history, counts) = r?;
        out[c].0.input_dim = dim;
        out[c].0.graphs = counts;
        out[c].0.runs.push(record);
        out[c].1.push(history);
    }
    for (report, _) in &mut out {
        report.summarize(ks);
    }
    Ok(out)
}

fn base_model(corpus: &Corpus, model: &ModelConfig) -> ModelConfig {
    ModelConfig {
        input_dim: corpus.manifest.schema.node_width(),
        num_classes: corpus.num_classes(),
        ..model.clone()
    }
}

fn with_config(report: serde_json::Value, manifest: &ExperimentManifest) -> serde_json::Value {
    serde_json::json!({ "manifest": manifest, "results": report })
}

fn topk_header(ks: &[usize]) -> (String, String) {
    let cols: Vec<String> = ks.iter().map(|k| format!("top-{k}")).collect();
    (format!("| {} |", cols.join(" | ")), format!("|{}", "---|".repeat(ks.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullyReport {
    pub gnn: CellReport,
    /// `(baseline, per-run reports, top-k micro summaries)`.
    pub baselines: Vec<(String, Vec<MetricsReport>, Vec<(usize, Summary)>)>,
}

/// Trains the graph model with no material features and compares against
/// the baselines on the same splits and seeds.
pub fn run_fully_guided(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ks: &[usize],
    seed0: u64,
    jobs: usize,
) -> Result<(FullyReport, Vec<RunHistory>)> {
    let cells = vec![Cell {
        name: "fully:gnn".into(),
        params: params([("layers", model.num_layers.to_string()), ("hidden", model.hidden.to_string())]),
        model: base_model(corpus, model),
        prepare: Box::new(|_| Prepared::map(corpus, |g| Ok(Some(g.clone())))),
    }];
    let (gnn, histories) = run_cells(&cells, cfg, seed0, ks, jobs)?.remove(0);
    let prepared = Prepared::map(corpus, |g| Ok(Some(g.clone())))?;
    let c = corpus.num_classes();
    let per_kind = parallel_map(BaselineKind::ALL.len() * cfg.runs, jobs, |j| {
        let kind = BaselineKind::ALL[j / cfg.runs];
        let seed = seed0 + (j % cfg.runs) as u64;
        run_baseline(kind, c, cfg, prepared.data(), &prepared.test, seed, ks)
    });
    let mut per_kind = per_kind.into_iter();
    let mut baselines = Vec::new();
    for kind in BaselineKind::ALL {
        let reports: Vec<MetricsReport> = per_kind.by_ref().take(cfg.runs).collect::<Result<_>>()?;
        let summaries = ks
            .iter()
            .filter(|&&k| reports.iter().all(|r| r.top(k).is_some()))
            .map(|&k| {
                let v: Vec<f64> = reports.iter().map(|r| r.top(k).expect("checked").micro_f1).collect();
                (k, Summary::of(&v))
            })
            .collect();
        baselines.push((kind.name().to_string(), reports, summaries));
    }
    Ok((FullyReport { gnn, baselines }, histories))
}

impl FullyReport {
    pub fn rows(&self, seed0: u64) -> Vec<MetricRow> {
        let mut rows = self.gnn.rows();
        for (name, reports, _) in &self.baselines {
            for (run, r) in reports.iter().enumerate() {
                rows.extend(report_rows(&format!("fully:{name}"), run, seed0 + run as u64, "test", r));
            }
        }
        rows
    }

    pub fn markdown(&self, ks: &[usize]) -> String {
        let (head, rule) = topk_header(ks);
        let mut s = format!("| model {head}\n|---{rule}\n");
        let cells = |get: &dyn Fn(usize) -> Option<Summary>| -> String {
            ks.iter()
                .map(|&k| get(k).map_or("n/a".to_string(), |s| s.cell()))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(s, "| gnn | {} |", cells(&|k| self.gnn.top(k).cloned()));
        for (name, _, sums) in &self.baselines {
            let _ = writeln!(
                s,
                "| {name} | {} |",
                cells(&|k| sums.iter().find(|t| t.0 == k).map(|t| t.1.clone()))
            );
        }
        s
    }
}

/// Context-label guidance: for each `(ratio, layers)` the material block is
/// filled on a seeded `ceil(ratio·|V|)` nodes per graph and metrics count the
/// remaining targets only. Ratio 0 is the fully guided setting.
pub fn run_partial_guided(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ratios: &[f64],
    layers: &[usize],
    ks: &[usize],
    seed0: u64,
    jobs: usize,
) -> Result<Vec<CellReport>> {
    let (fitted, catalog) = (&corpus.manifest.fitted, &corpus.manifest.catalog);
    let mut cells = Vec::new();
    for &ratio in ratios {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("context ratio {ratio} outside [0, 1)")));
        }
        for &k in layers {
            cells.push(Cell {
                name: format!("partial:ratio={ratio}:layers={k}"),
                params: params([("ratio", ratio.to_string()), ("layers", k.to_string())]),
                model: ModelConfig {
                    num_layers: k,
                    ..base_model(corpus, model)
                },
                prepare: Box::new(move |seed| {
                    let guide = Guidance {
                        context_ratio: ratio,
                        tier_depth: 0,
                    };
                    Prepared::map(corpus, |g| guide.apply(g, fitted, catalog, seed).map(Some))
                }),
            });
        }
    }
    Ok(run_cells(&cells, cfg, seed0, ks, jobs)?.into_iter().map(|c| c.0).collect())
}

/// Ratio-by-layers table of top-1 means.
pub fn partial_markdown(cells: &[CellReport], ratios: &[f64], layers: &[usize]) -> String {
    let mut s = format!(
        "| ratio | {} |\n|---|{}\n",
        layers.iter().map(|k| format!("K={k}")).collect::<Vec<_>>().join(" | "),
        "---|".repeat(layers.len())
    );
    for (i, r) in ratios.iter().enumerate() {
        let row: Vec<String> = (0..layers.len())
            .map(|j| cells[i * layers.len() + j].top(1).map_or("n/a".into(), Summary::cell))
            .collect();
        let _ = writeln!(s, "| {r} | {} |", row.join(" | "));
    }
    s
}

/// Tier guidance: every node carries its ground-truth tiers up to `depth`.
pub fn run_user_guided(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    depths: &[usize],
    ks: &[usize],
    seed0: u64,
    jobs: usize,
) -> Result<Vec<CellReport>> {
    let fitted = &corpus.manifest.fitted;
    let catalog = &corpus.manifest.catalog;
    let cells: Vec<Cell> = depths
        .iter()
        .map(|&depth| Cell {
            name: format!("user:depth={depth}"),
            params: params([("depth", depth.to_string())]),
            model: base_model(corpus, model),
            prepare: Box::new(move |seed| {
                let guide = Guidance {
                    context_ratio: 0.0,
                    tier_depth: depth,
                };
                Prepared::map(corpus, |g| guide.apply(g, fitted, catalog, seed).map(Some))
            }),
        })
        .collect();
    Ok(run_cells(&cells, cfg, seed0, ks, jobs)?.into_iter().map(|c| c.0).collect())
}

/// Depth-by-k tables, micro then weighted.
pub fn user_markdown(cells: &[CellReport], ks: &[usize]) -> String {
    let (head, rule) = topk_header(ks);
    let mut s = String::new();
    for (title, weighted) in [("micro-F1", false), ("weighted-F1", true)] {
        let _ = write!(s, "### {title}\n\n| depth {head}\n|---{rule}\n");
        for c in cells {
            let row: Vec<String> = ks
                .iter()
                .map(|&k| {
                    let v = if weighted { c.top_weighted(k) } else { c.top(k) };
                    v.map_or("n/a".into(), Summary::cell)
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", c.params["depth"], row.join(" | "));
        }
        s.push('\n');
    }
    s
}

fn parse_edge_mode(mode: &str) -> Result<Option<ConnectionKind>> {
    if mode.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    ConnectionKind::parse(mode)
        .map(Some)
        .ok_or_else(|| Error::Config(format!("unknown edge kind {mode:?}")))
}

/// Drops node blocks and edge kinds, re-applies the discard rule and
/// retrains for each `(block, edge mode)` pair.
pub fn run_feature_ablation(
    corpus: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    node_blocks: &[String],
    edge_modes: &[String],
    ks: &[usize],
    seed0: u64,
    jobs: usize,
) -> Result<Vec<CellReport>> {
    let mut cells = Vec::new();
    for block in node_blocks {
        if !block.eq_ignore_ascii_case("none") {
            corpus.manifest.schema.resolve_ablation(block)?;
        }
        for mode in edge_modes {
            let kind = parse_edge_mode(mode)?;
            let block = block.clone();
            cells.push(Cell {
                name: format!("ablation:{block}:{mode}"),
                params: params([("block", block.clone()), ("edges", mode.clone())]),
                model: base_model(corpus, model),
                prepare: Box::new(move |_| {
                    Prepared::map(corpus, |g| {
                        let mut g = apply_node_ablation(g, &block)?;
                        if let Some(kind) = kind {
                            g = apply_edge_ablation(&g, kind);
                        }
                        Ok(matches!(validate_graph(&g), Validity::Keep).then_some(g))
                    })
                }),
            });
        }
    }
    Ok(run_cells(&cells, cfg, seed0, ks, jobs)?.into_iter().map(|c| c.0).collect())
}

/// Block-by-edge-mode table of top-1 means.
pub fn ablation_markdown(cells: &[CellReport], node_blocks: &[String], edge_modes: &[String]) -> String {
    let mut s = format!(
        "| dropped block | d_x | {} |\n|---|---|{}\n",
        edge_modes.iter().map(|m| format!("edges: {m}")).collect::<Vec<_>>().join(" | "),
        "---|".repeat(edge_modes.len())
    );
    for (i, b) in node_blocks.iter().enumerate() {
        let row = &cells[i * edge_modes.len()..(i + 1) * edge_modes.len()];
        let vals: Vec<String> = row.iter().map(|c| c.top(1).map_or("n/a".into(), Summary::cell)).collect();
        let _ = writeln!(s, "| {b} | {} | {} |", row[0].input_dim, vals.join(" | "));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
    pub total: usize,
    /// Exact value → number of graphs.
    pub histogram: BTreeMap<usize, usize>,
}

impl CountStats {
    pub fn of(values: &[usize]) -> Self {
        let f: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let (mean, std) = mean_std(&f);
        let mut histogram = BTreeMap::new();
        for &v in values {
            *histogram.entry(v).or_insert(0) += 1;
        }
        Self {
            mean,
            std,
            min: values.iter().copied().min().unwrap_or(0),
            max: values.iter().copied().max().unwrap_or(0),
            total: values.iter().sum(),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub graphs: usize,
    pub nodes: CountStats,
    /// Undirected connections; each is stored as two directed edges.
    pub edges: CountStats,
    pub edge_kinds: BTreeMap<String, usize>,
    pub labels: Vec<(String, usize)>,
}

/// Size distributions, connection kinds and label counts over all graphs.
pub fn dataset_stats(graphs: &[AssemblyGraph], labels: &[String]) -> StatsReport {
    let nodes: Vec<usize> = graphs.iter().map(AssemblyGraph::num_nodes).collect();
    let edges: Vec<usize> = graphs.iter().map(AssemblyGraph::num_connections).collect();
    let mut kinds = [0usize; 3];
    let mut counts = vec![0usize; labels.len()];
    for g in graphs {
        for (k, c) in kinds.iter_mut().zip(g.edge_kind_counts()) {
            *k += c / 2;
        }
        for &y in &g.y {
            if let Some(c) = counts.get_mut(y) {
                *c += 1;
            }
        }
    }
    StatsReport {
        graphs: graphs.len(),
        nodes: CountStats::of(&nodes),
        edges: CountStats::of(&edges),
        edge_kinds: ConnectionKind::ALL
            .iter()
            .map(|k| (k.name().to_string(), kinds[k.index()]))
            .collect(),
        labels: labels.iter().cloned().zip(counts).collect(),
    }
}

impl StatsReport {
    pub fn markdown(&self) -> String {
        let mut s = format!(
            "{} graphs\n\n| | mean | std | min | max | total |\n|---|---|---|---|---|---|\n",
            self.graphs
        );
        for (name, c) in [("nodes", &self.nodes), ("edges", &self.edges)] {
            let _ = writeln!(s, "| {name} | {:.1} | {:.1} | {} | {} | {} |", c.mean, c.std, c.min, c.max, c.total);
        }
        s.push_str("\n| edge kind | count |\n|---|---|\n");
        for (k, c) in &self.edge_kinds {
            let _ = writeln!(s, "| {k} | {c} |");
        }
        s.push_str("\n| material | bodies |\n|---|---|\n");
        for (l, c) in &self.labels {
            let _ = writeln!(s, "| {l} | {c} |");
        }
        s
    }

    /// Plot data: `quantity,value,graphs`.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("quantity,value,graphs\n");
        for (name, c) in [("nodes", &self.nodes), ("edges", &self.edges)] {
            for (v, n) in &c.histogram {
                let _ = writeln!(s, "{name},{v},{n}");
            }
        }
        s
    }
}

/// Runs the manifest's protocol on its corpus.
pub fn run_manifest(manifest: &ExperimentManifest, jobs: usize) -> Result<ExperimentOutput> {
    let corpus = Corpus::load(&manifest.corpus)?;
    run_on_corpus(manifest, &corpus, jobs)
}

/// Same as [`run_manifest`] with the corpus already in memory.
pub fn run_on_corpus(manifest: &ExperimentManifest, corpus: &Corpus, jobs: usize) -> Result<ExperimentOutput> {
    manifest.train.validate()?;
    let (m, cfg, axes, seed) = (&manifest.model, &manifest.train, &manifest.grid, manifest.seed);
    let ks = &axes.ks;
    let cells_output = |cells: Vec<CellReport>, markdown: String| ExperimentOutput {
        rows: cells.iter().flat_map(CellReport::rows).collect(),
        report: with_config(serde_json::to_value(&cells).expect("report serializes"), manifest),
        markdown,
        histories: Vec::new(),
    };
    Ok(match manifest.protocol {
        Protocol::Fully => {
            let (report, histories) = run_fully_guided(corpus, m, cfg, ks, seed, jobs)?;
            ExperimentOutput {
                rows: report.rows(seed),
                markdown: report.markdown(ks),
                report: with_config(serde_json::to_value(&report)?, manifest),
                histories: histories
                    .iter()
                    .enumerate()
                    .map(|(r, h)| (format!("run_{r}.csv"), h.to_csv()))
                    .collect(),
            }
        }
        Protocol::Partial => {
            let cells = run_partial_guided(corpus, m, cfg, &axes.ratios, &axes.layers, ks, seed, jobs)?;
            let md = partial_markdown(&cells, &axes.ratios, &axes.layers);
            cells_output(cells, md)
        }
        Protocol::User => {
            let cells = run_user_guided(corpus, m, cfg, &axes.depths, ks, seed, jobs)?;
            let md = user_markdown(&cells, ks);
            cells_output(cells, md)
        }
        Protocol::Ablation => {
            let cells = run_feature_ablation(corpus, m, cfg, &axes.blocks, &axes.edge_modes, ks, seed, jobs)?;
            let md = ablation_markdown(&cells, &axes.blocks, &axes.edge_modes);
            cells_output(cells, md)
        }
        Protocol::Grid => {
            let space = GridSpace {
                layers: axes.layers.clone(),
                hidden: axes.hidden.clone(),
                kinds: axes.kinds.clone(),
            };
            let (train_graphs, val_graphs) = (corpus.train(), corpus.val());
            let data = TrainData {
                train: &train_graphs,
                val: &val_graphs,
            };
            let rows = grid_search(&space, &base_model(corpus, m), cfg, data, seed, jobs)?;
            let mut metric_rows = Vec::new();
            let mut md = String::from("| rank | layers | hidden | kind | val micro-F1 |\n|---|---|---|---|---|\n");
            for (i, r) in rows.iter().enumerate() {
                let name = format!("grid:layers={}:hidden={}:kind={}", r.num_layers, r.hidden, r.layer_kind.name());
                for (metric, value) in [("val_micro_f1_mean", r.val_mean), ("val_micro_f1_std", r.val_std)] {
                    metric_rows.push(MetricRow {
                        experiment: name.clone(),
                        run: 0,
                        seed,
                        split: "val".into(),
                        metric: metric.into(),
                        k: None,
                        value,
                    });
                }
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} |",
                    i + 1,
                    r.num_layers,
                    r.hidden,
                    r.layer_kind.name(),
                    Summary {
                        mean: r.val_mean,
                        std: r.val_std
                    }
                    .cell()
                );
            }
            ExperimentOutput {
                rows: metric_rows,
                report: with_config(serde_json::to_value(&rows)?, manifest),
                markdown: md,
                histories: Vec::new(),
            }
        }
        Protocol::Stats => {
            let graphs: Vec<AssemblyGraph> = corpus.graphs.values().cloned().collect();
            let stats = dataset_stats(&graphs, &corpus.manifest.fitted.labels.classes);
            ExperimentOutput {
                rows: Vec::new(),
                markdown: stats.markdown(),
                histories: vec![("histogram.csv".into(), stats.histogram_csv())],
                report: with_config(serde_json::to_value(&stats)?, manifest),
            }
        }
    })
}

/// Writes `metrics.csv`, `report.json`, `report.md` and any histories into
/// `dir`.
pub fn write_outputs(dir: &Path, manifest: &ExperimentManifest, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |path: PathBuf, bytes: &[u8]| std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e));
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &out.rows)?;
    write(dir.join(METRICS_FILE), &csv)?;
    write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&out.report)?.as_bytes())?;
    let md = format!(
        "# {} experiment\n\n{}\n## Configuration\n\n```json\n{}\n```\n",
        manifest.protocol.name(),
        out.markdown,
        serde_json::to_string_pretty(manifest)?
    );
    write(dir.join(TABLE_FILE), md.as_bytes())?;
    if !out.histories.is_empty() {
        let hdir = dir.join(HISTORY_DIR);
        std::fs::create_dir_all(&hdir).map_err(|e| Error::io(&hdir, e))?;
        for (name, text) in &out.histories {
            write(hdir.join(name), text.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ConnectionKind::{Contact as C, Hierarchical as H, Joint as J};
    use crate::graph::tests::toy_graph;

    #[test]
    fn size_statistics() {
        let graphs = vec![
            toy_graph(3, &[(0, 1, C), (1, 2, C)]),
            toy_graph(4, &[(0, 1, C), (1, 2, C), (2, 3, J)]),
            toy_graph(5, &[(0, 1, C), (1, 2, C), (2, 3, C), (3, 4, H)]),
        ];
        let s = dataset_stats(&graphs, &["a".into(), "b".into()]);
        assert_eq!(s.nodes.mean, 4.0);
        assert_eq!(s.nodes.max, 5);
        assert_eq!(s.nodes.min, 3);
        let kinds: usize = s.edge_kinds.values().sum();
        assert_eq!(kinds, s.edges.total);
        assert_eq!(s.edges.total, 9);
    }

    #[test]
    fn manifest_defaults_fill_axes() {
        let text = serde_json::json!({
            "protocol": "partial",
            "corpus": "c",
            "model": ModelConfig::new(4, 2),
            "train": {},
            "out_dir": "o"
        });
        let m: ExperimentManifest = serde_json::from_value(text).unwrap();
        assert_eq!(m.grid.ratios, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(m.train, TrainConfig::default());
    }
}
