//! Per-document failure taxonomy for model outputs.

use serde::{Deserialize, Serialize};

use super::align::bare_word;
use super::ConfusionCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureClass {
    Ok,
    EntityMiss,
    PromptEcho,
    NoOp,
    Incoherent,
}

impl FailureClass {
    pub const ALL: [FailureClass; 5] = [
        FailureClass::Ok,
        FailureClass::EntityMiss,
        FailureClass::PromptEcho,
        FailureClass::NoOp,
        FailureClass::Incoherent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::Ok => "OK",
            FailureClass::EntityMiss => "ENTITY_MISS",
            FailureClass::PromptEcho => "PROMPT_ECHO",
            FailureClass::NoOp => "NO_OP",
            FailureClass::Incoherent => "INCOHERENT",
        }
    }
}

pub const ECHO_PROMPT_OVERLAP: f64 = 0.6;
pub const ECHO_ORIGINAL_OVERLAP: f64 = 0.3;
pub const INCOHERENT_MIN_LEN: f64 = 0.3;
pub const INCOHERENT_MAX_LEN: f64 = 3.0;
pub const INCOHERENT_PRESERVED: f64 = 0.3;

fn words(text: &str, skip: Option<&str>) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| Some(w.as_str()) != skip)
        .collect()
}

/// Length of the longest common subsequence of two word sequences.
pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// First matching rule wins: PROMPT_ECHO, NO_OP, INCOHERENT, ENTITY_MISS,
/// then OK. Word overlaps are LCS lengths over lowercased alphanumeric
/// words; the bare marker word is ignored on every side.
pub fn classify_failure(
    original: &str,
    prompt_text: &str,
    output: &str,
    counts: &ConfusionCounts,
    marker: &str,
) -> FailureClass {
    let bare = bare_word(marker);
    let skip = bare.as_deref();
    let (o, p, y) = (words(original, skip), words(prompt_text, skip), words(output, skip));

    if !y.is_empty() {
        let with_prompt = ratio(lcs_len(&y, &p), y.len());
        let with_original = ratio(lcs_len(&y, &o), y.len());
        if with_prompt > ECHO_PROMPT_OVERLAP && with_original < ECHO_ORIGINAL_OVERLAP {
            return FailureClass::PromptEcho;
        }
    }

    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    if counts.tp + counts.fn_ > 0 && squash(original) == squash(output) {
        return FailureClass::NoOp;
    }

    let (lo, ly) = (original.chars().count(), output.chars().count());
    if lo > 0 {
        let len_ratio = ly as f64 / lo as f64;
        let preserved = ratio(lcs_len(&o, &y), o.len());
        if !(INCOHERENT_MIN_LEN..=INCOHERENT_MAX_LEN).contains(&len_ratio) && preserved < INCOHERENT_PRESERVED {
            return FailureClass::Incoherent;
        }
    }

    if counts.fn_ > 0 {
        FailureClass::EntityMiss
    } else {
        FailureClass::Ok
    }
}
