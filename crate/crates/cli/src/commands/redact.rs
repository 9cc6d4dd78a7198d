use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use deid_core::corpus::CorpusEntry;
use deid_core::prompting::PromptTemplate;
use deid_core::redaction::{
    IdentityBackend, LlmBackend, MockBackend, RedactionBackend, RedactionError, RedactionResult, RuleBackend,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{build_prompt, chat_client, load_manifest, thread_pool, write, write_run_manifest};
use crate::config::{Backend, RunConfig};
use crate::store::{self, meta_file, output_dir, output_file, prompt_file, OutputMeta, PromptRecord};
use crate::CliError;

#[derive(Debug, Default, Clone, Serialize)]
pub struct BackendTally {
    pub backend: String,
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn make_backend(
    backend: Backend,
    cfg: &RunConfig,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<Box<dyn RedactionBackend>, CliError> {
    Ok(match backend {
        Backend::Mock => Box::new(MockBackend),
        Backend::Identity => Box::new(IdentityBackend),
        Backend::Rule => Box::new(RuleBackend::default()),
        Backend::Llm => {
            let mut b = LlmBackend::new(chat_client(cfg, env)?, cfg.model.clone());
            b.temperature = cfg.temperature;
            b.passes = cfg.passes;
            Box::new(b)
        }
    })
}

/// Runs every configured backend. A transport failure stops the failing
/// backend's remaining documents; outputs already written stay on disk.
pub fn run(cfg: &RunConfig, force: bool, env: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    let entries = load_manifest(cfg)?;
    let template = build_prompt(cfg)?;
    let backends: Vec<(Backend, Box<dyn RedactionBackend>)> =
        cfg.backends.iter().map(|&b| make_backend(b, cfg, env).map(|x| (b, x))).collect::<Result<_, _>>()?;
    let pool = thread_pool(cfg)?;

    let mut tallies = Vec::new();
    let mut transport_failure = None;
    for (kind, backend) in &backends {
        let (tally, failure) = run_backend(cfg, *kind, backend.as_ref(), &template, &entries, force, &pool)?;
        println!(
            "{}/{}: wrote {}, skipped {}, failed {}",
            kind, cfg.variant, tally.written, tally.skipped, tally.failed
        );
        tallies.push(tally);
        if transport_failure.is_none() {
            transport_failure = failure;
        }
    }
    write_run_manifest(
        cfg,
        "redact",
        &format!("redact-{}", cfg.variant),
        serde_json::json!({ "force": force, "prompt_text": template.render(), "backends": tallies }),
    )?;
    match transport_failure {
        Some(msg) => Err(CliError::Transport(msg)),
        None => Ok(()),
    }
}

fn check_prompt_record(cfg: &RunConfig, record: &PromptRecord, force: bool) -> Result<(), CliError> {
    let path = prompt_file(&cfg.out, &record.backend, &record.prompt_variant);
    if force || !path.exists() {
        return Ok(());
    }
    let old: PromptRecord = store::read_json(&path)?;
    if &old != record {
        return Err(CliError::Usage(format!(
            "{}/{} outputs were produced under a different prompt or marker; rerun with --force",
            record.backend, record.prompt_variant
        )));
    }
    Ok(())
}

fn run_backend(
    cfg: &RunConfig,
    kind: Backend,
    backend: &dyn RedactionBackend,
    template: &PromptTemplate,
    entries: &[CorpusEntry],
    force: bool,
    pool: &rayon::ThreadPool,
) -> Result<(BackendTally, Option<String>), CliError> {
    let variant = cfg.variant.as_str();
    let dir = output_dir(&cfg.out, kind.as_str(), variant);
    let record = PromptRecord {
        backend: kind.to_string(),
        prompt_variant: variant.to_string(),
        marker: template.marker.clone(),
        prompt_text: template.render(),
    };
    check_prompt_record(cfg, &record, force)?;
    write(&prompt_file(&cfg.out, kind.as_str(), variant), &store::to_json_line(&record))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let todo: Vec<&CorpusEntry> =
        entries.iter().filter(|e| force || !output_file(&dir, &e.doc.doc_id).exists()).collect();
    let mut tally =
        BackendTally { backend: kind.to_string(), skipped: entries.len() - todo.len(), ..Default::default() };
    let abort = AtomicBool::new(false);
    let first_failure: Arc<std::sync::Mutex<Option<String>>> = Arc::default();

    let results: Vec<Result<bool, CliError>> = pool.install(|| {
        todo.par_iter()
            .map(|entry| {
                if abort.load(Ordering::SeqCst) {
                    return Ok(false);
                }
                match backend.redact(&entry.doc, &entry.spans, template) {
                    Ok(r) => persist(&dir, &r, kind, variant, backend.is_remote()).map(|_| true),
                    Err(e @ (RedactionError::Transport(_) | RedactionError::EmptyCompletion { .. })) => {
                        abort.store(true, Ordering::SeqCst);
                        log::error!("{kind}/{variant} {}: {e}", entry.doc.doc_id);
                        first_failure
                            .lock()
                            .expect("no panics while held")
                            .get_or_insert_with(|| format!("{kind}/{variant} document {}: {e}", entry.doc.doc_id));
                        Ok(false)
                    }
                    Err(e) => Err(CliError::Failed(format!("{kind}/{variant} document {}: {e}", entry.doc.doc_id))),
                }
            })
            .collect()
    });
    for r in results {
        if r? {
            tally.written += 1;
        } else {
            tally.failed += 1;
        }
    }
    let failure = first_failure.lock().expect("no panics while held").take();
    Ok((tally, failure))
}

/// Writes the sidecar first and the raw output last, so an output file
/// always has its metadata.
fn persist(
    dir: &std::path::Path,
    r: &RedactionResult,
    kind: Backend,
    variant: &str,
    remote: bool,
) -> Result<(), CliError> {
    let meta = OutputMeta {
        doc_id: r.doc_id.clone(),
        backend: kind.to_string(),
        prompt_variant: variant.to_string(),
        elapsed_ms: remote.then_some(r.elapsed.as_millis() as u64),
        transport: r.transport_meta.clone(),
        spans: r.spans.clone(),
    };
    write(&meta_file(dir, &r.doc_id), &store::to_json_line(&meta))?;
    write(&output_file(dir, &r.doc_id), r.redacted_text.as_bytes())
}
