//! Run configuration resolved from flags, environment, a key=value file and
//! defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deid_core::corpus::SyntheticSpec;
use deid_core::evaluation::MatchMode;
use deid_core::hipaa_map::DEFAULT_THRESHOLD;
use deid_core::llm_client::{RetryPolicy, ENV_ENDPOINT};
use deid_core::prompting::DEFAULT_MARKER;
use serde::Serialize;

use crate::CliError;

pub const DEFAULT_OUT: &str = "deid-run";
pub const DEFAULT_DOCS: usize = 100;
pub const DEFAULT_PER_CATEGORY: usize = 3;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com";
pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Keys accepted in the config file. Flag names are the same with `-`.
pub const KEYS: [&str; 18] = [
    "out",
    "corpus_dir",
    "docs",
    "per_category",
    "seed",
    "backends",
    "variant",
    "marker",
    "threshold",
    "mode",
    "endpoint",
    "model",
    "concurrency",
    "passes",
    "temperature",
    "max_attempts",
    "timeout_secs",
    "backoff_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Identity,
    Rule,
    Llm,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::Mock, Backend::Identity, Backend::Rule, Backend::Llm];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Mock => "mock",
            Backend::Identity => "identity",
            Backend::Rule => "rule",
            Backend::Llm => "llm",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Backend::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown backend {s:?} (expected mock, identity, rule or llm)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    Implicit,
    Explicit,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 2] = [PromptVariant::Implicit, PromptVariant::Explicit];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Implicit => "implicit",
            PromptVariant::Explicit => "explicit",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown prompt variant {s:?} (expected implicit or explicit)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    Directory { path: PathBuf },
    Synthetic { spec: SyntheticSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub corpus: CorpusSource,
    pub backends: Vec<Backend>,
    pub variant: PromptVariant,
    pub marker: String,
    pub threshold: f64,
    pub mode: MatchMode,
    pub seed: u64,
    pub endpoint: String,
    pub model: String,
    pub out: PathBuf,
    pub concurrency: usize,
    pub passes: u32,
    pub temperature: Option<f64>,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.backends.is_empty() {
            return Err(CliError::Usage("at least one backend is required".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Usage(format!("threshold {} is outside [0, 1]", self.threshold)));
        }
        if self.concurrency == 0 {
            return Err(CliError::Usage("concurrency must be at least 1".into()));
        }
        if self.passes == 0 || self.max_attempts == 0 {
            return Err(CliError::Usage("passes and max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        let base = std::time::Duration::from_millis(self.backoff_ms);
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_backoff: base,
            max_backoff: base.max(RetryPolicy::default().max_backoff),
            request_timeout: std::time::Duration::from_secs(self.timeout_secs),
            ..RetryPolicy::default()
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.jsonl")
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// values may be wrapped in double quotes.
pub fn parse_config_file(src: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| CliError::Usage(format!("config line {}: {msg}", i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(bad(&format!("unknown key {key:?}")));
        }
        let value = value.trim();
        let value = value.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(value);
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(bad(&format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_file(&src)
}

/// Raw values for one precedence layer, keyed like the config file.
pub type Layer = BTreeMap<String, String>;

/// Reads the environment layer through `var`.
pub fn env_layer(var: impl Fn(&str) -> Option<String>) -> Layer {
    let mut out = Layer::new();
    if let Some(v) = var(ENV_ENDPOINT).filter(|v| !v.trim().is_empty()) {
        out.insert("endpoint".into(), v);
    }
    out
}

struct Resolver<'a> {
    layers: [(&'static str, &'a Layer); 3],
}

impl Resolver<'_> {
    fn raw(&self, key: &str) -> Option<(&'static str, &str)> {
        self.layers.iter().find_map(|(name, l)| l.get(key).map(|v| (*name, v.as_str())))
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((layer, v)) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("invalid {key} {v:?} from {layer}: {e}"))),
        }
    }

    fn corpus(&self) -> Result<CorpusSource, CliError> {
        // The first layer naming a source wins; one layer may not name both.
        for (name, layer) in self.layers {
            match (layer.get("corpus_dir"), layer.contains_key("docs")) {
                (Some(_), true) => {
                    return Err(CliError::Usage(format!("{name}: corpus_dir and docs are mutually exclusive")))
                }
                (Some(dir), false) => return Ok(CorpusSource::Directory { path: PathBuf::from(dir) }),
                (None, true) => break,
                (None, false) => {}
            }
        }
        let docs = self.get("docs", DEFAULT_DOCS)?;
        let per_category = self.get("per_category", DEFAULT_PER_CATEGORY)?;
        let seed = self.get("seed", DEFAULT_SEED)?;
        Ok(CorpusSource::Synthetic { spec: SyntheticSpec::uniform(docs, per_category, seed) })
    }
}

fn parse_list<T: FromStr<Err = String>>(s: &str) -> Result<Vec<T>, CliError> {
    let mut out: Vec<T> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        out.push(part.parse().map_err(CliError::Usage)?);
    }
    Ok(out)
}

fn parse_mode(s: &str) -> Result<MatchMode, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "strict" => Ok(MatchMode::Strict),
        "lenient" => Ok(MatchMode::Lenient),
        other => Err(CliError::Usage(format!("unknown match mode {other:?} (expected strict or lenient)"))),
    }
}

/// Merges the layers and applies defaults.
pub fn resolve(flags: &Layer, env: &Layer, file: &Layer) -> Result<RunConfig, CliError> {
    let r = Resolver { layers: [("flags", flags), ("environment", env), ("config file", file)] };
    let mut backends: Vec<Backend> = Vec::new();
    for b in parse_list(r.raw("backends").map(|(_, v)| v).unwrap_or("mock"))? {
        if !backends.contains(&b) {
            backends.push(b);
        }
    }
    let cfg = RunConfig {
        corpus: r.corpus()?,
        backends,
        variant: r.get("variant", PromptVariant::Implicit)?,
        marker: r.get("marker", DEFAULT_MARKER.to_string())?,
        threshold: r.get("threshold", DEFAULT_THRESHOLD)?,
        mode: parse_mode(r.raw("mode").map(|(_, v)| v).unwrap_or("strict"))?,
        seed: r.get("seed", DEFAULT_SEED)?,
        endpoint: r.get("endpoint", DEFAULT_ENDPOINT.to_string())?,
        model: r.get("model", DEFAULT_MODEL.to_string())?,
        out: PathBuf::from(r.get("out", DEFAULT_OUT.to_string())?),
        concurrency: r.get("concurrency", DEFAULT_CONCURRENCY)?,
        passes: r.get("passes", 1)?,
        temperature: r.opt("temperature")?,
        max_attempts: r.get("max_attempts", RetryPolicy::default().max_attempts)?,
        timeout_secs: r.get("timeout_secs", RetryPolicy::default().request_timeout.as_secs())?,
        backoff_ms: r.get("backoff_ms", RetryPolicy::default().base_backoff.as_millis() as u64)?,
    };
    cfg.validate()?;
    Ok(cfg)
}
