use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Material recommendation for CAD assemblies with graph neural networks.
#[derive(Debug, Parser)]
#[command(name = "matgraph", version, propagate_version = true)]
pub struct Cli {
    /// Base seed for splits, initialization and shuffling
    #[arg(long, global = true, help_heading = "Global options", default_value_t = 0)]
    pub seed: u64,

    /// Directory for every output artifact
    #[arg(long, global = true, help_heading = "Global options", env = "MATGRAPH_OUT", default_value = "out")]
    pub out_dir: PathBuf,

    /// error, warn, info, debug or trace
    #[arg(long, global = true, help_heading = "Global options", default_value = "info")]
    pub log_level: String,

    /// Worker threads for runs and grid cells
    #[arg(long, global = true, help_heading = "Global options", default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an assembly directory into records and drop all-default assemblies
    Ingest(IngestArgs),
    /// Encode records into graph bundles with a train/val/test split
    BuildGraphs(BuildArgs),
    /// Corpus statistics: node, edge and material distributions
    Stats(CorpusArgs),
    /// Train one model and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a corpus split
    Evaluate(EvaluateArgs),
    /// Feature ablation over node blocks and edge kinds
    Ablate(AblateArgs),
    /// Run a guidance protocol over several seeds
    Experiment(ExperimentArgs),
    /// Hyperparameter grid on the validation split
    Grid(GridArgs),
    /// Generate a synthetic corpus
    Synth(SynthArgs),
    /// Serve a checkpoint over HTTP
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    Planted,
    Homophily,
    Taxonomy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Fully,
    Partial,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of assembly JSON documents [default: <out-dir>/assemblies]
    #[arg(long)]
    pub assemblies: Option<PathBuf>,
    /// Material catalog [default: <out-dir>/catalog.json]
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Records written by ingest [default: <out-dir>/records.json]
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Material catalog [default: <out-dir>/catalog.json]
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Token embedding table [default: <out-dir>/semantic.txt]
    #[arg(long)]
    pub semantic: Option<PathBuf>,
    /// Geometry embedding table keyed by body uuid [default: none, stub vectors]
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Split manifest with the test ids [default: <out-dir>/split.json if present, else no test set]
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Build options, or a synth.json carrying them [default: <out-dir>/synth.json if present, else built-in]
    #[arg(long)]
    pub options: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus directory written by build-graphs [default: <out-dir>/corpus]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Message-passing layers
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Hidden width
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// sage_mean, sage_lstm or gconv
    #[arg(long, default_value = "sage_mean")]
    pub layer_kind: String,
    /// Maximum epochs
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    /// Graphs per batch
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// inverse_frequency or uniform
    #[arg(long, default_value = "inverse_frequency")]
    pub weight_mode: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fraction of nodes per graph whose material is given as input
    #[arg(long, default_value_t = 0.0)]
    pub context_ratio: f64,
    /// Material tiers given as input for every node (0 to 3)
    #[arg(long, default_value_t = 0)]
    pub tier_depth: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Checkpoint written by train [default: <out-dir>/model.ckpt]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to score
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Top-k cutoffs
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Seeds per configuration
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Top-k cutoffs
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Node blocks removed one at a time ("none" keeps all)
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,SemanticNames,body_name,occurrence_name,body_physical,occurrence_physical,body_geometry,global"
    )]
    pub blocks: Vec<String>,
    /// Edge kinds removed one at a time ("none" keeps all)
    #[arg(long, value_delimiter = ',', default_value = "none,hierarchical")]
    pub edge_modes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Guidance protocol
    #[arg(value_enum)]
    pub protocol: ProtocolArg,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Experiment manifest; replaces every other experiment flag [default: none]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Context ratios for the partial protocol
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    pub ratios: Vec<f64>,
    /// Layer counts crossed with ratios for the partial protocol
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub layer_sweep: Vec<usize>,
    /// Tier depths for the user protocol
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub depths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seeds per cell
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Layer counts
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub grid_layers: Vec<usize>,
    /// Hidden widths
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    pub grid_hidden: Vec<usize>,
    /// Layer kinds
    #[arg(long, value_delimiter = ',', default_value = "sage_mean,sage_lstm,gconv")]
    pub grid_kinds: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator
    #[arg(long, value_enum, default_value = "planted")]
    pub kind: SynthKindArg,
    /// Number of assemblies
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    /// Token embedding width
    #[arg(long, default_value_t = 32)]
    pub semantic_dim: usize,
    /// Geometry embedding width
    #[arg(long, default_value_t = 32)]
    pub visual_dim: usize,
    /// Fraction of assemblies listed as test ids
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP port
    #[arg(long, default_value_t = matgraph_serve::DEFAULT_PORT)]
    pub port: u16,
    /// Checkpoint loaded at startup [default: none, load later with POST /v1/model]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Catalog overriding the one stored in checkpoints [default: none]
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}
