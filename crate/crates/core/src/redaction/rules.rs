//! Regex and word-list rule engine.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::Regex;

use super::{apply_redaction, RedactionError};
use crate::category::PhiCategory;
use crate::corpus::AnnotatedSpan;
use crate::text::CharIndex;

const DEFAULT_RULES: &str = include_str!("../../data/default_rules.tsv");

/// Order in which categories claim text.
pub const APPLICATION_ORDER: [PhiCategory; 7] = [
    PhiCategory::Contact,
    PhiCategory::Date,
    PhiCategory::Id,
    PhiCategory::Age,
    PhiCategory::Location,
    PhiCategory::Name,
    PhiCategory::Profession,
];

#[derive(Debug, Clone)]
pub enum Pattern {
    /// Redacts capture group 1 when present, else the whole match.
    Regex(Regex),
    Words {
        words: Vec<String>,
        matcher: Regex,
    },
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    patterns: BTreeMap<PhiCategory, Vec<Pattern>>,
}

fn words_regex(words: &[String]) -> Regex {
    let mut sorted: Vec<&String> = words.iter().collect();
    sorted.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
    let alts: Vec<String> = sorted.iter().map(|w| regex::escape(w)).collect();
    Regex::new(&format!(r"\b(?:{})\b", alts.join("|"))).expect("escaped alternation compiles")
}

impl RuleSet {
    /// Parses `<CATEGORY>\t<regex|word>\t<pattern>` lines. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(src: &str) -> Result<Self, RedactionError> {
        let mut patterns: BTreeMap<PhiCategory, Vec<Pattern>> = BTreeMap::new();
        let mut words: BTreeMap<PhiCategory, Vec<String>> = BTreeMap::new();
        for (i, raw) in src.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| RedactionError::Rules { line: line_no, message };
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = raw.splitn(3, '\t');
            let (Some(cat), Some(kind), Some(pat)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected three tab-separated fields".into()));
            };
            let category: PhiCategory = cat.trim().parse().map_err(|e| err(format!("{e}")))?;
            if category == PhiCategory::Others {
                return Err(err("OTHERS cannot carry rules".into()));
            }
            if pat.is_empty() {
                return Err(err("empty pattern".into()));
            }
            match kind.trim() {
                "regex" => {
                    let re = Regex::new(pat).map_err(|e| err(e.to_string()))?;
                    patterns.entry(category).or_default().push(Pattern::Regex(re));
                }
                "word" => words.entry(category).or_default().push(pat.to_string()),
                other => return Err(err(format!("unknown pattern kind {other:?}"))),
            }
        }
        for (category, list) in words {
            let matcher = words_regex(&list);
            patterns.entry(category).or_default().push(Pattern::Words { words: list, matcher });
        }
        let missing: Vec<&str> =
            APPLICATION_ORDER.iter().filter(|c| !patterns.contains_key(c)).map(|c| c.as_str()).collect();
        if !missing.is_empty() {
            return Err(RedactionError::Rules { line: 0, message: format!("no rules for {}", missing.join(", ")) });
        }
        Ok(RuleSet { patterns })
    }

    pub fn load(path: &Path) -> Result<Self, RedactionError> {
        let src = fs::read_to_string(path)
            .map_err(|e| RedactionError::Rules { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&src)
    }

    /// The shipped rule file.
    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES).expect("shipped rules are valid")
    }

    pub fn patterns(&self, category: PhiCategory) -> &[Pattern] {
        self.patterns.get(&category).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Char ranges matched for one category, before overlap resolution.
    fn candidates(&self, text: &str, idx: &CharIndex, category: PhiCategory) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut push = |s: usize, e: usize| {
            if s < e {
                if let (Some(cs), Some(ce)) = (idx.char_of_byte(s), idx.char_of_byte(e)) {
                    out.push((cs, ce));
                }
            }
        };
        for pattern in self.patterns(category) {
            match pattern {
                Pattern::Regex(re) if re.captures_len() > 1 => {
                    for caps in re.captures_iter(text) {
                        if let Some(g) = caps.get(1) {
                            push(g.start(), g.end());
                        }
                    }
                }
                Pattern::Regex(re) => re.find_iter(text).for_each(|m| push(m.start(), m.end())),
                Pattern::Words { matcher, .. } => matcher.find_iter(text).for_each(|m| push(m.start(), m.end())),
            }
        }
        out
    }
}

/// Applies categories in [`APPLICATION_ORDER`]; within a category the
/// leftmost, then longest, match not overlapping any earlier pick wins.
pub fn rule_redact(text: &str, rules: &RuleSet, marker: &str) -> (String, Vec<AnnotatedSpan>) {
    let idx = CharIndex::new(text);
    let mut picked: Vec<(usize, usize, PhiCategory)> = Vec::new();
    for category in APPLICATION_ORDER {
        let mut cands = rules.candidates(text, &idx, category);
        cands.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        for (s, e) in cands {
            if picked.iter().all(|&(ps, pe, _)| e <= ps || pe <= s) {
                picked.push((s, e, category));
            }
        }
    }
    picked.sort();
    let spans: Vec<AnnotatedSpan> = picked
        .into_iter()
        .map(|(start, end, category)| AnnotatedSpan {
            start,
            end,
            category,
            surface: idx.slice(text, start, end).expect("offsets from char boundaries").to_string(),
        })
        .collect();
    let redacted = apply_redaction(text, &spans, marker).expect("picked spans are disjoint and in range");
    (redacted, spans)
}
