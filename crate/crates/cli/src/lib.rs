//! The `deid` command line: corpus generation, identifier mapping,
//! redaction runs, evaluation reports and surrogate filling over one run
//! directory.

pub mod commands;
pub mod config;
pub mod store;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::Layer;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Transport(_) => EXIT_TRANSPORT,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Io { .. } | CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deid", version, about = "De-identify clinical notes and score the result")]
pub struct Cli {
    /// key = value file with run settings (flags and environment win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run directory holding manifest.jsonl, outputs/ and reports/.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the corpus manifest from a synthetic spec or an XML directory.
    Generate(GenerateArgs),
    /// Map the 18 HIPAA identifiers onto PHI categories.
    Map(MapArgs),
    /// Run redaction backends over the corpus and keep every raw output.
    Redact(RedactArgs),
    /// Score stored outputs and write the report tables.
    Eval(EvalArgs),
    /// Replace redacted spans with consistent surrogates.
    Surrogate(SurrogateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of synthetic documents.
    #[arg(long, conflicts_with = "corpus_dir")]
    pub docs: Option<usize>,
    /// Entities per concrete category in each synthetic document.
    #[arg(long)]
    pub per_category: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory of annotated XML files instead of a synthetic corpus.
    #[arg(long, value_name = "DIR")]
    pub corpus_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct LlmArgs {
    /// Base URL of the chat-completions service.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent with each request.
    #[arg(long)]
    pub model: Option<String>,
    /// Sampling temperature (default 0).
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Attempts per request, including the first.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Initial retry backoff in milliseconds, doubled per retry.
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Maximum documents in flight.
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score with the remote model instead of the lexical scorer.
    #[arg(long)]
    pub llm_scorer: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct RedactArgs {
    /// Comma-separated backends: mock, identity, rule, llm.
    #[arg(long)]
    pub backends: Option<String>,
    /// implicit or explicit.
    #[arg(long)]
    pub variant: Option<String>,
    /// Replacement term for redacted spans.
    #[arg(long)]
    pub marker: Option<String>,
    /// Mapping threshold for the explicit prompt.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Prompting passes per document for the llm backend.
    #[arg(long)]
    pub passes: Option<u32>,
    /// Redo documents that already have an output.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Only these backends (default: every stored run).
    #[arg(long)]
    pub backends: Option<String>,
    /// Only this prompt variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// strict or lenient entity matching.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    /// Fill the outputs of this backend (default: the gold spans).
    #[arg(long)]
    pub backend: Option<String>,
    /// Prompt variant of the backend outputs.
    #[arg(long)]
    pub variant: Option<String>,
    /// Seed for surrogate selection.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the original-to-surrogate table. It re-identifies the
    /// documents; keep it out of shared locations.
    #[arg(long)]
    pub audit: bool,
}

fn put(layer: &mut Layer, key: &str, value: Option<impl Display>) {
    if let Some(v) = value {
        layer.insert(key.to_string(), v.to_string());
    }
}

impl LlmArgs {
    fn fill(&self, l: &mut Layer) {
        put(l, "endpoint", self.endpoint.as_ref());
        put(l, "model", self.model.as_ref());
        put(l, "temperature", self.temperature);
        put(l, "max_attempts", self.max_attempts);
        put(l, "timeout_secs", self.timeout_secs);
        put(l, "backoff_ms", self.backoff_ms);
        put(l, "concurrency", self.concurrency);
    }
}

impl Cli {
    /// The flag layer: only values given on the command line.
    pub fn flag_layer(&self) -> Layer {
        let mut l = Layer::new();
        put(&mut l, "out", self.out.as_ref().map(|p| p.display()));
        match &self.command {
            Command::Generate(a) => {
                put(&mut l, "docs", a.docs);
                put(&mut l, "per_category", a.per_category);
                put(&mut l, "seed", a.seed);
                put(&mut l, "corpus_dir", a.corpus_dir.as_ref().map(|p| p.display()));
            }
            Command::Map(a) => {
                put(&mut l, "threshold", a.threshold);
                a.llm.fill(&mut l);
            }
            Command::Redact(a) => {
                put(&mut l, "backends", a.backends.as_ref());
                put(&mut l, "variant", a.variant.as_ref());
                put(&mut l, "marker", a.marker.as_ref());
                put(&mut l, "threshold", a.threshold);
                put(&mut l, "passes", a.passes);
                a.llm.fill(&mut l);
            }
            Command::Eval(a) => {
                put(&mut l, "backends", a.backends.as_ref());
                put(&mut l, "variant", a.variant.as_ref());
                put(&mut l, "mode", a.mode.as_ref());
            }
            Command::Surrogate(a) => {
                put(&mut l, "backends", a.backend.as_ref());
                put(&mut l, "variant", a.variant.as_ref());
                put(&mut l, "seed", a.seed);
            }
        }
        l
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// `env` stands in for the process environment.
pub fn run<I, T>(argv: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => execute(&cli, env),
        Err(e) => parse_failure(e),
    }
}

/// Prints a clap error or help text and returns its exit code.
pub fn parse_failure(e: clap::Error) -> i32 {
    let _ = e.print();
    if e.use_stderr() {
        EXIT_USAGE
    } else {
        EXIT_OK
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli, env: &dyn Fn(&str) -> Option<String>) -> i32 {
    match commands::dispatch(cli, env) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("deid: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("deid").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flag_layer_holds_only_given_flags() {
        let cli = parse(&["redact", "--backends", "mock,rule", "--out", "r", "--force"]);
        let l = cli.flag_layer();
        assert_eq!(l.len(), 2);
        assert_eq!(l["backends"], "mock,rule");
        assert_eq!(l["out"], "r");
    }

    #[test]
    fn generate_sources_conflict() {
        let r = Cli::try_parse_from(["deid", "generate", "--docs", "3", "--corpus-dir", "x"]);
        assert!(r.is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Transport(String::new()).exit_code(), 3);
        assert_eq!(CliError::Mismatch(String::new()).exit_code(), 4);
        assert_eq!(run(["deid", "nope"], &|_| None), 2);
    }
}
