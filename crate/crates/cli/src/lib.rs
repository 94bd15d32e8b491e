//! Pipeline driver for the `plink` binary.
//!
//! Each stage reads a JSON run config (`--config`), applies flag overrides,
//! runs, and writes its outputs plus a `run.json` manifest holding the
//! effective config. Passing a manifest back as `--config` re-runs the stage.

pub mod config;
mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use plink_core::corpus::Dataset;
use plink_core::rng::{stream, stream_rng};

pub use config::{RunConfig, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(plink_core::Error),
}

impl From<plink_core::Error> for CliError {
    fn from(e: plink_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "plink", version, about = "Multilingual entity linking pipeline")]
struct Cli {
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Debug, Subcommand)]
enum Stage {
    /// Load entities (and optional anchor-linked text) into a KB directory.
    BuildKb(Flags),
    /// Build a silver dataset from anchors, or downsample an existing one.
    BuildDataset(Flags),
    /// Generate candidate sets for every mention.
    Triage(Flags),
    /// Train the ranker.
    Train(Flags),
    /// Train the ranker with the adversarial language objective.
    TrainAdv(Flags),
    /// Link mentions with a checkpoint (or the cosine baseline).
    Predict(Flags),
    /// Score predictions against gold mentions.
    Evaluate(Flags),
    /// Exact-match rate and mean Jaro-Winkler of a dataset.
    Stats(Flags),
}

/// Flags shared by all stages; each stage reads the ones it needs.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entity JSONL file or a directory written by `build-kb`.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Dataset directory (documents.jsonl + mentions.jsonl).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Unlabeled text pool JSONL for the adversary.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub adv_stop: Option<usize>,
    #[arg(long)]
    pub el_epochs: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Candidate sets from `triage`; computed on the fly when absent.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// `tac-adv` or `wiki-adv`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Source and target language codes of the adversary, e.g. `en,zh`.
    #[arg(long)]
    pub languages: Option<String>,
    /// Anchor-linked documents JSONL.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// File with one seed entity id per line.
    #[arg(long)]
    pub seed_entities: Option<PathBuf>,
    #[arg(long)]
    pub nil_fraction: Option<f64>,
    /// Keep a uniform random subset of this many mentions.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Use two-stage retrieval in triage.
    #[arg(long)]
    pub two_stage: bool,
    /// Predict with the cosine nearest-neighbour baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Disable data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

/// Runs the stage named in `argv` (program name first) and returns the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, flags) = match cli.stage {
        Stage::BuildKb(f) => ("build-kb", f),
        Stage::BuildDataset(f) => ("build-dataset", f),
        Stage::Triage(f) => ("triage", f),
        Stage::Train(f) => ("train", f),
        Stage::TrainAdv(f) => ("train-adv", f),
        Stage::Predict(f) => ("predict", f),
        Stage::Evaluate(f) => ("evaluate", f),
        Stage::Stats(f) => ("stats", f),
    };
    match run(name, &flags) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("plink {name}: {e}");
            e.exit_code()
        }
    }
}

fn run(stage: &str, flags: &Flags) -> Result<(), CliError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(flags)?;
    match stage {
        "build-kb" => stages::build_kb(&cfg),
        "build-dataset" => stages::build_dataset(&cfg),
        "triage" => stages::triage(&cfg),
        "train" => stages::train(&cfg, false),
        "train-adv" => stages::train(&cfg, true),
        "predict" => stages::predict(&cfg),
        "evaluate" => stages::evaluate(&cfg),
        "stats" => stages::stats(&cfg),
        other => Err(CliError::Usage(format!("unknown stage `{other}`"))),
    }
}

/// Uniform random subset of `target` mentions in original order, keeping
/// only the documents they reference.
pub fn downsample_train(ds: &Dataset, target: usize, seed: u64) -> plink_core::Result<Dataset> {
    if target > ds.len() {
        return Err(plink_core::Error::Config(format!("cannot downsample {} mentions to {target}", ds.len())));
    }
    let mut rng = stream_rng(seed, stream::DOWNSAMPLE);
    let mut keep = rand::seq::index::sample(&mut rng, ds.len(), target).into_vec();
    keep.sort_unstable();
    Ok(ds.restrict_to(keep.into_iter().map(|i| ds.mentions[i].clone()).collect()))
}
