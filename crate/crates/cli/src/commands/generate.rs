use deid_core::corpus::{generate_synthetic, load_corpus, manifest_to_string};

use super::{corpus_error, write, write_run_manifest};
use crate::config::{CorpusSource, RunConfig};
use crate::store::check_doc_id;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let (entries, skipped) = match &cfg.corpus {
        CorpusSource::Synthetic { spec } => (generate_synthetic(spec).map_err(corpus_error)?, 0),
        CorpusSource::Directory { path } => {
            let loaded = load_corpus(path).map_err(corpus_error)?;
            let skipped = loaded.skip_count();
            (loaded.entries, skipped)
        }
    };
    for e in &entries {
        check_doc_id(&e.doc.doc_id)?;
    }
    let path = cfg.manifest_path();
    write(&path, manifest_to_string(&entries).as_bytes())?;
    let spans: usize = entries.iter().map(|e| e.spans.len()).sum();
    write_run_manifest(
        cfg,
        "generate",
        "generate",
        serde_json::json!({ "documents": entries.len(), "spans": spans, "skipped_files": skipped }),
    )?;
    println!("wrote {} documents ({spans} spans) to {}", entries.len(), path.display());
    if skipped > 0 {
        eprintln!("skipped {skipped} unparseable file(s)");
    }
    Ok(())
}
