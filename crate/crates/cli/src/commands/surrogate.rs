use std::path::Path;

use deid_core::corpus::CorpusEntry;
use deid_core::surrogate::{document_seed, surrogate_markers, surrogate_replace, SurrogateOutput};
use rayon::prelude::*;
use serde::Serialize;

use super::{load_manifest, thread_pool, write, write_run_manifest};
use crate::config::RunConfig;
use crate::store::{self, meta_file, output_dir, output_file, prompt_file, OutputMeta, PromptRecord};
use crate::CliError;

#[derive(Serialize)]
struct Audit<'a> {
    doc_id: &'a str,
    date_shift_days: i64,
    assignments: &'a [deid_core::surrogate::SurrogateAssignment],
    warnings: &'a [deid_core::surrogate::SurrogateWarning],
}

/// Fills spans with surrogates. Without a backend the gold spans are used;
/// with one, its recorded spans when it has them, otherwise the segments
/// the alignment recovers behind each marker.
pub fn run(cfg: &RunConfig, from_backend: bool, audit: bool) -> Result<(), CliError> {
    let entries = load_manifest(cfg)?;
    let source = from_backend.then(|| (cfg.backends[0].as_str(), cfg.variant.as_str()));
    let (dest, record) = match source {
        None => (cfg.out.join("surrogates").join("gold"), None),
        Some((b, v)) => {
            let path = prompt_file(&cfg.out, b, v);
            if !path.exists() {
                return Err(CliError::Usage(format!("no {b}/{v} outputs; run `deid redact` first")));
            }
            (cfg.out.join("surrogates").join(b).join(v), Some(store::read_json::<PromptRecord>(&path)?))
        }
    };
    let pool = thread_pool(cfg)?;
    let results: Vec<Result<usize, CliError>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let out = fill(cfg, e, source, record.as_ref())?;
                write(&dest.join(format!("{}.txt", e.doc.doc_id)), out.text.as_bytes())?;
                if audit {
                    let a = Audit {
                        doc_id: &e.doc.doc_id,
                        date_shift_days: out.date_shift_days,
                        assignments: &out.assignments,
                        warnings: &out.warnings,
                    };
                    write(&dest.join(format!("{}.audit.json", e.doc.doc_id)), &store::to_json_line(&a))?;
                }
                Ok(out.warnings.len())
            })
            .collect()
    });
    let mut warnings = 0;
    for r in results {
        warnings += r?;
    }
    let origin = source.map(|(b, v)| format!("{b}/{v}")).unwrap_or_else(|| "gold".into());
    write_run_manifest(cfg, "surrogate", "surrogate", serde_json::json!({ "source": origin, "audit": audit }))?;
    println!("wrote {} documents to {} ({warnings} warning(s))", entries.len(), dest.display());
    Ok(())
}

fn fill(
    cfg: &RunConfig,
    e: &CorpusEntry,
    source: Option<(&str, &str)>,
    record: Option<&PromptRecord>,
) -> Result<SurrogateOutput, CliError> {
    let seed = document_seed(cfg.seed, &e.doc.doc_id);
    let failed = |err: deid_core::surrogate::SurrogateError| CliError::Failed(format!("{}: {err}", e.doc.doc_id));
    let (Some((b, v)), Some(record)) = (source, record) else {
        return surrogate_replace(&e.doc.text, &e.spans, seed).map_err(failed);
    };
    let dir = output_dir(&cfg.out, b, v);
    let out_path = output_file(&dir, &e.doc.doc_id);
    let redacted = read_text(&out_path)?;
    let meta: OutputMeta = store::read_json(&meta_file(&dir, &e.doc.doc_id))?;
    match meta.spans {
        Some(spans) => surrogate_replace(&e.doc.text, &spans, seed).map_err(failed),
        None => Ok(surrogate_markers(&e.doc.text, &redacted, &record.marker, &e.spans, seed)),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::Mismatch(format!("{} is missing", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
