use deid_core::hipaa_map::{
    default_glosses, llm_similarity_scorer, map_identifiers, mapping_to_json, CategoryMapping, LexicalScorer, MapError,
    SimilarityScorer, HIPAA_IDENTIFIERS,
};

use super::{chat_client, write, write_run_manifest};
use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: &RunConfig, llm_scorer: bool, env: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    let scorer: Box<dyn SimilarityScorer> = if llm_scorer {
        Box::new(llm_similarity_scorer(chat_client(cfg, env)?, cfg.model.clone()))
    } else {
        Box::new(LexicalScorer)
    };
    let mapping = map_identifiers(&HIPAA_IDENTIFIERS, &default_glosses(), scorer.as_ref(), cfg.threshold).map_err(
        |e| match e {
            MapError::Scorer(c) => CliError::Transport(format!("scorer: {c}")),
            other => CliError::Usage(other.to_string()),
        },
    )?;
    let path = cfg.out.join("mapping.json");
    let mut json = mapping_to_json(&mapping);
    json.push('\n');
    write(&path, json.as_bytes())?;
    let scorer_name = if llm_scorer { "llm" } else { "lexical" };
    write_run_manifest(cfg, "map", "map", serde_json::json!({ "scorer": scorer_name }))?;
    print!("{}", table(&mapping));
    Ok(())
}

/// One row per identifier: index, label, category, best score.
pub fn table(mapping: &[CategoryMapping]) -> String {
    let width = mapping.iter().map(|m| m.identifier.label.chars().count()).max().unwrap_or(0);
    let mut out = format!("{:>2}  {:<width$}  {:<10}  score\n", "#", "identifier", "category");
    for m in mapping {
        out.push_str(&format!(
            "{:>2}  {:<width$}  {:<10}  {:.3}\n",
            m.identifier.index,
            m.identifier.label,
            m.category.as_str(),
            m.score
        ));
    }
    out
}
