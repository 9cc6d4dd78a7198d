use std::collections::{BTreeSet, HashMap};

use deid_core::evaluation::{emit_report, evaluate_corpus, EvalInput, EvalReport, ReportTables};

use super::{load_manifest, write_run_manifest, EvalFilter};
use crate::config::RunConfig;
use crate::store::{self, discover_runs, output_dir, prompt_file, PromptRecord};
use crate::CliError;

/// Per-run reports and the tables written to `reports/`.
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
    pub tables: ReportTables,
}

fn mismatch(run: &str, what: &str, ids: &[&String]) -> CliError {
    CliError::Mismatch(format!("{run}: {} {what} (first: {})", ids.len(), ids[0]))
}

pub fn run(cfg: &RunConfig, filter: EvalFilter) -> Result<EvalSummary, CliError> {
    let entries = load_manifest(cfg)?;
    let runs: Vec<(String, String)> = discover_runs(&cfg.out)?
        .into_iter()
        .filter(|(b, v)| {
            (!filter.backends || cfg.backends.iter().any(|k| k.as_str() == b))
                && (!filter.variant || cfg.variant.as_str() == v)
        })
        .collect();
    if runs.is_empty() {
        return Err(CliError::Usage(format!("no outputs to evaluate under {}", cfg.out.join("outputs").display())));
    }

    let ids: BTreeSet<&String> = entries.iter().map(|e| &e.doc.doc_id).collect();
    let mut reports = Vec::new();
    for (backend, variant) in &runs {
        let name = format!("{backend}/{variant}");
        let record_path = prompt_file(&cfg.out, backend, variant);
        if !record_path.exists() {
            return Err(CliError::Mismatch(format!("{name}: prompt record {} is missing", record_path.display())));
        }
        let record: PromptRecord = store::read_json(&record_path)?;
        let outputs = store::read_outputs(&output_dir(&cfg.out, backend, variant))?;
        let missing: Vec<&String> = ids.iter().copied().filter(|id| !outputs.contains_key(*id)).collect();
        if !missing.is_empty() {
            return Err(mismatch(&name, "documents without output", &missing));
        }
        let unknown: Vec<&String> = outputs.keys().filter(|id| !ids.contains(id)).collect();
        if !unknown.is_empty() {
            return Err(mismatch(&name, "outputs for documents not in the manifest", &unknown));
        }
        let outputs: HashMap<String, String> = outputs.into_iter().collect();
        let input = EvalInput {
            backend,
            prompt_variant: variant,
            prompt_text: &record.prompt_text,
            marker: &record.marker,
            mode: cfg.mode,
        };
        reports
            .push(evaluate_corpus(&input, &entries, &outputs).map_err(|e| CliError::Mismatch(format!("{name}: {e}")))?);
    }

    let tables = emit_report(&reports);
    let dir = cfg.out.join("reports");
    tables.write_to(&dir).map_err(|e| CliError::io(&dir, e))?;
    let evaluated: Vec<String> = runs.iter().map(|(b, v)| format!("{b}/{v}")).collect();
    write_run_manifest(cfg, "eval", "eval", serde_json::json!({ "runs": evaluated, "documents": entries.len() }))?;
    print!("{}", tables.text);
    Ok(EvalSummary { reports, tables })
}
