//! `hred`: import a corpus, train word vectors and dialogue models, chat,
//! build the context map, run the probe experiment and serve the HTTP API.
//!
//! Exit status: 0 success, 1 usage, 2 data or format error, 3 divergence.

mod chat;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hred_core::analysis::DistanceSpace;
use hred_core::embeddings::EmbeddingMode;
use hred_core::models::{Architecture, UpdateGranularity};
use hred_core::recurrent::{DecodeMode, HeadKind};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "hred", version, about = "Hierarchical recurrent dialogue models", args_override_self = true)]
struct Cli {
    /// TOML file with one table of flags per command.
    #[arg(long, global = true, env = "HRED_CONFIG")]
    config: Option<PathBuf>,
    /// Base directory for relative input and output paths.
    #[arg(long, global = true, env = "HRED_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert `__eou__` dialogs and topic labels into the canonical corpus.
    Import(ImportArgs),
    /// Train skip-gram word vectors on a corpus.
    Embed(EmbedArgs),
    /// Train an ENCDEC or HRED model.
    Train(TrainArgs),
    /// Talk to a model in the terminal.
    Chat(ChatArgs),
    /// Context vectors, t-SNE map and topic centroids of a corpus.
    Analyze(AnalyzeArgs),
    /// Distance-reduction experiment for a probe sentence.
    Experiment(ExperimentArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Import(_) => "import",
            Command::Embed(_) => "embed",
            Command::Train(_) => "train",
            Command::Chat(_) => "chat",
            Command::Analyze(_) => "analyze",
            Command::Experiment(_) => "experiment",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ImportArgs {
    /// One conversation per line, utterances separated by `__eou__`.
    dialogs: PathBuf,
    /// One topic label per line, parallel to the dialogs.
    topics: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Keep only the most frequent topics.
    #[arg(long, default_value_t = 5)]
    top_topics: usize,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
struct VocabArgs {
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Vocabulary size including the special tokens.
    #[arg(long, default_value_t = 10_000)]
    max_vocab: usize,
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    corpus: PathBuf,
    /// Word-vector text file to write.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ArchArg {
    Encdec,
    Hred,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum HeadArg {
    Softmax,
    Cosine,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EmbeddingModeArg {
    Frozen,
    Trainable,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GranularityArg {
    Token,
    Sentence,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SpaceArg {
    Map,
    Original,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Encdec => Architecture::EncDec,
            ArchArg::Hred => Architecture::Hred,
        }
    }
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Softmax => HeadKind::Softmax,
            HeadArg::Cosine => HeadKind::Cosine,
        }
    }
}

impl From<EmbeddingModeArg> for EmbeddingMode {
    fn from(m: EmbeddingModeArg) -> Self {
        match m {
            EmbeddingModeArg::Frozen => EmbeddingMode::Frozen,
            EmbeddingModeArg::Trainable => EmbeddingMode::Trainable,
        }
    }
}

impl From<GranularityArg> for UpdateGranularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Token => UpdateGranularity::PerToken,
            GranularityArg::Sentence => UpdateGranularity::PerSentence,
        }
    }
}

impl From<SpaceArg> for DistanceSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Map => DistanceSpace::Map,
            SpaceArg::Original => DistanceSpace::Original,
        }
    }
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    /// Sampling temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Longest reply in tokens.
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    fn mode(&self) -> DecodeMode {
        match self.mode {
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Sample => DecodeMode::Sample {
                temperature: self.temperature,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Canonical corpus file.
    corpus: PathBuf,
    /// Checkpoint to write.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Hred)]
    arch: ArchArg,
    #[arg(long, value_enum, default_value_t = HeadArg::Softmax)]
    head: HeadArg,
    #[arg(long, value_enum, default_value_t = EmbeddingModeArg::Trainable)]
    embedding_mode: EmbeddingModeArg,
    /// Word vectors to start from (text format).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 80)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = GranularityArg::Sentence)]
    granularity: GranularityArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Global gradient-norm ceiling.
    #[arg(long)]
    clip: Option<f64>,
    /// Stop once teacher-forced token accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Debug, Args, Serialize)]
struct ChatArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append each exchange to this JSON-lines file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    checkpoint: PathBuf,
    corpus: PathBuf,
    #[arg(long, short = 'o')]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct ExperimentArgs {
    checkpoint: PathBuf,
    /// Directory written by `hred analyze`.
    analysis_dir: PathBuf,
    #[arg(long)]
    probe: String,
    /// Corpus of the analysis; read from its manifest when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SpaceArg::Map)]
    space: SpaceArg,
    /// Where to write the report; defaults to the analysis directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    /// Checkpoints as `path` or `id=path`; the id defaults to the file stem.
    #[arg(required = true)]
    models: Vec<String>,
    /// Directory written by `hred analyze`.
    #[arg(long)]
    analysis: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "HRED_PORT", default_value_t = 8080)]
    port: u16,
    /// Directory for per-session transcripts.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 3600)]
    ttl: u64,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hred_core::Error),
}

impl From<hred_core::Error> for CliError {
    fn from(e: hred_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
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
    fn exit_code(&self) -> u8 {
        use hred_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Divergence { .. } | E::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub struct Paths {
    base: Option<PathBuf>,
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Keys a config file may not set while their environment variable is present.
const ENV_BOUND: [(&str, &str); 2] = [("port", "HRED_PORT"), ("data-dir", "HRED_DATA_DIR")];

fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&args)?;
    let Some(path) = &cli.config else {
        return Ok(cli);
    };
    let table = config::load(path).map_err(|m| clap::Error::raw(clap::error::ErrorKind::InvalidValue, m + "\n"))?;
    let extra = config::flags(&table, cli.command.name(), &ENV_BOUND)
        .map_err(|m| clap::Error::raw(clap::error::ErrorKind::InvalidValue, m + "\n"))?;
    Cli::try_parse_from(config::splice(args, cli.command.name(), extra))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let paths = Paths { base: cli.data_dir };
    let result = match cli.command {
        Command::Import(a) => commands::import(&a, &paths),
        Command::Embed(a) => commands::embed(&a, &paths),
        Command::Train(a) => commands::train(&a, &paths),
        Command::Chat(a) => commands::chat(&a, &paths),
        Command::Analyze(a) => commands::analyze(&a, &paths),
        Command::Experiment(a) => commands::experiment(&a, &paths),
        Command::Serve(a) => commands::serve(&a, &paths),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
