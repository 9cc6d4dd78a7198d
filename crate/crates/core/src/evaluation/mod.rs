//! Scoring redacted output against gold spans.

mod align;
mod failure;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::category::PhiCategory;
use crate::corpus::{AnnotatedSpan, CorpusEntry};
use crate::text::CharIndex;

pub use align::{align, Alignment, Segment, TokenPair};
pub use failure::{classify_failure, FailureClass};
pub use report::{emit_report, ReportTables};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn accuracy(&self) -> Option<f64> {
        accuracy(self).ok()
    }

    /// `tp / (tp + fn)`, or `None` without gold entities.
    pub fn entity_removal_rate(&self) -> Option<f64> {
        let gold = self.tp + self.fn_;
        (gold > 0).then(|| self.tp as f64 / gold as f64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("all confusion counts are zero")]
    EmptyCounts,
    #[error("invalid gold span {index}: {reason}")]
    InvalidGold { index: usize, reason: String },
    #[error("no output for document {0}")]
    MissingOutput(String),
    #[error("output for unknown document {0}")]
    UnexpectedOutput(String),
}

/// `(tp + tn) / (tp + tn + fp + fn)`.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, EvalError> {
    let total = c.total();
    if total == 0 {
        return Err(EvalError::EmptyCounts);
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// Row key of the per-category breakdown. False positives and true
/// negatives have no gold category and land in `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreCategory {
    Phi(PhiCategory),
    None,
}

impl fmt::Display for ScoreCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreCategory::Phi(c) => f.write_str(c.as_str()),
            ScoreCategory::None => f.write_str("NONE"),
        }
    }
}

impl Serialize for ScoreCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Every non-space character of a gold entity must be replaced.
    #[default]
    Strict,
    /// Any overlap with a replaced segment counts.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Score {
    pub counts: ConfusionCounts,
    pub per_category: BTreeMap<ScoreCategory, ConfusionCounts>,
}

fn covered(span: &AnnotatedSpan, chars: &[char], segments: &[Segment], mode: MatchMode) -> bool {
    match mode {
        MatchMode::Lenient => segments.iter().any(|s| s.overlaps(span.start, span.end)),
        MatchMode::Strict => {
            let in_seg = |p: usize| segments.iter().any(|s| s.src_start <= p && p < s.src_end);
            let visible: Vec<usize> = (span.start..span.end).filter(|&p| !chars[p].is_whitespace()).collect();
            if visible.is_empty() {
                (span.start..span.end).all(in_seg)
            } else {
                visible.into_iter().all(in_seg)
            }
        }
    }
}

fn check_gold(gold: &[AnnotatedSpan], original: &str) -> Result<(), EvalError> {
    let idx = CharIndex::new(original);
    let len = idx.char_len();
    let bad = |index: usize, reason: String| Err(EvalError::InvalidGold { index, reason });
    for (i, g) in gold.iter().enumerate() {
        if g.start >= g.end || g.end > len {
            return bad(i, format!("[{}, {}) outside text of length {len}", g.start, g.end));
        }
        if idx.slice(original, g.start, g.end) != Some(g.surface.as_str()) {
            return bad(i, "surface does not match text".into());
        }
        if let Some(j) = gold.iter().enumerate().position(|(j, h)| j != i && g.overlaps(h)) {
            return bad(i, format!("overlaps span {j}"));
        }
    }
    Ok(())
}

/// Counts per gold entity and per replaced segment. TN counts surviving
/// original tokens outside every gold span.
pub fn score(
    alignment: &Alignment,
    gold: &[AnnotatedSpan],
    original: &str,
    mode: MatchMode,
) -> Result<Score, EvalError> {
    check_gold(gold, original)?;
    let chars: Vec<char> = original.chars().collect();
    let mut out = Score::default();
    for cat in PhiCategory::ALL {
        if gold.iter().any(|g| g.category == cat) {
            out.per_category.insert(ScoreCategory::Phi(cat), ConfusionCounts::default());
        }
    }
    out.per_category.insert(ScoreCategory::None, ConfusionCounts::default());

    for g in gold {
        let row = out.per_category.get_mut(&ScoreCategory::Phi(g.category)).expect("row created above");
        if covered(g, &chars, &alignment.replaced_segments, mode) {
            out.counts.tp += 1;
            row.tp += 1;
        } else {
            out.counts.fn_ += 1;
            row.fn_ += 1;
        }
    }
    let none = out.per_category.get_mut(&ScoreCategory::None).expect("row created above");
    for s in &alignment.replaced_segments {
        if s.is_empty() || !gold.iter().any(|g| s.overlaps(g.start, g.end)) {
            out.counts.fp += 1;
            none.fp += 1;
        }
    }
    for p in &alignment.preserved_map {
        if !p.marker_like && !gold.iter().any(|g| g.start < p.src_end && p.src_start < g.end) {
            out.counts.tn += 1;
            none.tn += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocEval {
    pub doc_id: String,
    pub counts: ConfusionCounts,
    pub per_category: BTreeMap<ScoreCategory, ConfusionCounts>,
    pub failure: FailureClass,
}

/// Aligns, scores and classifies one document.
pub fn evaluate_document(
    entry: &CorpusEntry,
    output: &str,
    prompt_text: &str,
    marker: &str,
    mode: MatchMode,
) -> Result<DocEval, EvalError> {
    let alignment = align(&entry.doc.text, output, marker);
    let s = score(&alignment, &entry.spans, &entry.doc.text, mode)?;
    let failure = classify_failure(&entry.doc.text, prompt_text, output, &s.counts, marker);
    Ok(DocEval { doc_id: entry.doc.doc_id.clone(), counts: s.counts, per_category: s.per_category, failure })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub backend: String,
    pub prompt_variant: String,
    pub docs: usize,
    /// Pooled over all documents.
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    /// 1.0 when the corpus has no gold entities.
    pub entity_removal_rate: f64,
    pub per_category: BTreeMap<ScoreCategory, ConfusionCounts>,
    pub failures: BTreeMap<FailureClass, usize>,
    pub per_doc: Vec<DocEval>,
}

pub struct EvalInput<'a> {
    pub backend: &'a str,
    pub prompt_variant: &'a str,
    pub prompt_text: &'a str,
    pub marker: &'a str,
    pub mode: MatchMode,
}

/// Evaluates every corpus document against `outputs` (doc_id to text).
/// Documents run in parallel; results are ordered by doc_id.
pub fn evaluate_corpus(
    input: &EvalInput<'_>,
    entries: &[CorpusEntry],
    outputs: &HashMap<String, String>,
) -> Result<EvalReport, EvalError> {
    if let Some(extra) = outputs.keys().filter(|k| !entries.iter().any(|e| &e.doc.doc_id == *k)).min() {
        return Err(EvalError::UnexpectedOutput(extra.clone()));
    }
    let mut per_doc: Vec<DocEval> = entries
        .par_iter()
        .map(|e| {
            let out = outputs.get(&e.doc.doc_id).ok_or_else(|| EvalError::MissingOutput(e.doc.doc_id.clone()))?;
            evaluate_document(e, out, input.prompt_text, input.marker, input.mode)
        })
        .collect::<Result<_, _>>()?;
    per_doc.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(aggregate(input.backend, input.prompt_variant, per_doc))
}

/// Micro-averaged reduction of per-document results.
pub fn aggregate(backend: &str, prompt_variant: &str, per_doc: Vec<DocEval>) -> EvalReport {
    let mut counts = ConfusionCounts::default();
    let mut per_category: BTreeMap<ScoreCategory, ConfusionCounts> = BTreeMap::new();
    let mut failures: BTreeMap<FailureClass, usize> = BTreeMap::new();
    for d in &per_doc {
        counts.add(&d.counts);
        for (k, c) in &d.per_category {
            per_category.entry(*k).or_default().add(c);
        }
        *failures.entry(d.failure).or_default() += 1;
    }
    EvalReport {
        backend: backend.to_string(),
        prompt_variant: prompt_variant.to_string(),
        docs: per_doc.len(),
        counts,
        accuracy: counts.accuracy(),
        entity_removal_rate: counts.entity_removal_rate().unwrap_or(1.0),
        per_category,
        failures,
        per_doc,
    }
}
