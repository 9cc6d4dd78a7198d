//! Subcommand implementations and the helpers they share.

mod eval;
mod generate;
mod map;
mod redact;
mod surrogate;

use std::path::Path;
use std::sync::Arc;

use deid_core::corpus::{read_manifest_file, CorpusEntry, CorpusError};
use deid_core::hipaa_map::default_mapping;
use deid_core::llm_client::{ApiKey, ChatClient, ENV_API_KEY};
use deid_core::prompting::{build_explicit_prompt, build_implicit_prompt, PromptTemplate};
use serde::Serialize;

use crate::config::{self, env_layer, Layer, PromptVariant, RunConfig};
use crate::store::{check_doc_id, to_json_line, write_atomic};
use crate::{Cli, CliError, Command};

pub use eval::EvalSummary;

pub fn dispatch(cli: &Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => config::load_config_file(p)?,
        None => Layer::new(),
    };
    let cfg = config::resolve(&cli.flag_layer(), &env_layer(env), &file)?;
    match &cli.command {
        Command::Generate(_) => generate::run(&cfg),
        Command::Map(a) => map::run(&cfg, a.llm_scorer, env),
        Command::Redact(a) => redact::run(&cfg, a.force, env),
        Command::Eval(a) => {
            let filter = EvalFilter { backends: a.backends.is_some(), variant: a.variant.is_some() };
            eval::run(&cfg, filter).map(|_| ())
        }
        Command::Surrogate(a) => surrogate::run(&cfg, a.backend.is_some(), a.audit),
    }
}

/// Which config fields restrict `eval` to a subset of the stored runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalFilter {
    pub backends: bool,
    pub variant: bool,
}

fn corpus_error(e: CorpusError) -> CliError {
    match e {
        CorpusError::Io { path, source } => CliError::io(&path, source),
        other => CliError::Usage(other.to_string()),
    }
}

pub(crate) fn load_manifest(cfg: &RunConfig) -> Result<Vec<CorpusEntry>, CliError> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(CliError::Usage(format!("{} not found; run `deid generate` first", path.display())));
    }
    let entries = read_manifest_file(&path).map_err(corpus_error)?;
    for e in &entries {
        check_doc_id(&e.doc.doc_id)?;
    }
    Ok(entries)
}

/// The prompt for `cfg.variant` with `cfg.marker` as the replacement term.
/// The explicit variant lists the categories of the default mapping at
/// `cfg.threshold`.
pub(crate) fn build_prompt(cfg: &RunConfig) -> Result<PromptTemplate, CliError> {
    let template = match cfg.variant {
        PromptVariant::Implicit => PromptTemplate { marker: cfg.marker.clone(), ..build_implicit_prompt() },
        PromptVariant::Explicit => {
            let mapping = default_mapping(cfg.threshold).map_err(|e| CliError::Usage(e.to_string()))?;
            build_explicit_prompt(&mapping, &cfg.marker).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    template.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(template)
}

pub(crate) fn chat_client(cfg: &RunConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Arc<ChatClient>, CliError> {
    let key = env(ENV_API_KEY)
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| CliError::Usage(format!("{ENV_API_KEY} is not set")))?;
    let key = ApiKey::new(key).map_err(|e| CliError::Usage(e.to_string()))?;
    ChatClient::with_inflight_cap(&cfg.endpoint, key, cfg.retry_policy(), cfg.concurrency)
        .map(Arc::new)
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub(crate) fn thread_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency)
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

#[derive(Serialize)]
struct Versions {
    deid_cli: &'static str,
    deid_core: &'static str,
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    versions: Versions,
    details: T,
}

/// Writes `runs/<name>.json` with the resolved config, tool versions and
/// command-specific details. Secrets never enter the config.
pub(crate) fn write_run_manifest<T: Serialize>(
    cfg: &RunConfig,
    command: &str,
    name: &str,
    details: T,
) -> Result<(), CliError> {
    let m = RunManifest {
        command,
        config: cfg,
        versions: Versions { deid_cli: env!("CARGO_PKG_VERSION"), deid_core: deid_core::VERSION },
        details,
    };
    let path = cfg.out.join("runs").join(format!("{name}.json"));
    write_atomic(&path, &to_json_line(&m)).map_err(|e| CliError::io(&path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::io(path, e))
}
