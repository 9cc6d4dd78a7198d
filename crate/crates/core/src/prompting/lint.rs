//! Shape-based checks for the four known ways a redaction prompt goes wrong.
//!
//! Each check is the smallest decidable form of a failing example:
//!
//! * `TaskOnly`: the prompt states the task and nothing else.
//! * `StrayPunctuation`: the command line ends in sentence punctuation
//!   instead of the colon that introduces the rule list, so the model reads
//!   the command as a finished sentence.
//! * `MultipleTasks`: more than one task is requested at once.
//! * `NoOutputSpec`: nothing tells the model what to put in place of PHI
//!   (no bracketed token, no quoted replacement term).

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintCode {
    TaskOnly,
    StrayPunctuation,
    MultipleTasks,
    NoOutputSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintWarning {
    pub code: LintCode,
    pub message: String,
    /// 1-based line number, when the warning points at one line.
    pub location: Option<usize>,
}

// A de-identification verb aimed at the whole input ("the following note").
static TASK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:anonymi[sz]e|de-?identify|redact)\b[^.!?\n]*?\b(?:following|this|these|the)\s+(?:[\w-]+\s+){0,2}?(?:notes?|texts?|documents?|reports?|records?|passages?)\b",
    )
    .expect("static regex")
});

// A second, unrelated task conjoined onto a task sentence.
static CONJOINED_TASK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:and|then|also)\s+(?:please\s+)?(?:summari[sz]e|translate|extract|classify|explain|list|rewrite|paraphrase|diagnose|answer)\b",
    )
    .expect("static regex")
});

static COMMAND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\breplace\b").expect("static regex"));

static BRACKET_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[[^\[\]\n]+\]").expect("static regex"));

static QUOTED_TERM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(?:term|token|word|with|by)\s*:?\s*["“'‘][^"”'’\n]+["”'’]"#).expect("static regex")
});

fn task_mentions(line: &str) -> usize {
    let direct = TASK.find_iter(line).count();
    if direct > 0 && CONJOINED_TASK.is_match(line) {
        direct + 1
    } else {
        direct
    }
}

/// Returns warnings ordered by code.
pub fn lint_prompt(text: &str) -> Vec<LintWarning> {
    let mut out = Vec::new();
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).collect();

    let task_counts: Vec<usize> = lines.iter().map(|(_, l)| task_mentions(l)).collect();
    let task_lines = task_counts.iter().filter(|&&n| n > 0).count();
    let total_tasks: usize = task_counts.iter().sum();

    if task_lines > 0 && task_lines == lines.len() {
        out.push(LintWarning {
            code: LintCode::TaskOnly,
            message: "prompt states the task but gives no command or rules".into(),
            location: None,
        });
    }

    for (n, line) in &lines {
        if !COMMAND.is_match(line) {
            continue;
        }
        if let Some(last) = line.chars().last() {
            if matches!(last, '.' | '!' | '?' | ';' | '。') {
                out.push(LintWarning {
                    code: LintCode::StrayPunctuation,
                    message: format!("command line ends with {last:?} instead of ':'"),
                    location: Some(*n),
                });
            }
        }
    }

    if total_tasks >= 2 {
        let first_extra = lines
            .iter()
            .zip(&task_counts)
            .filter(|(_, &c)| c > 0)
            .map(|((n, _), &c)| (*n, c))
            .scan(0usize, |seen, (n, c)| {
                *seen += c;
                Some((n, *seen))
            })
            .find(|&(_, seen)| seen >= 2)
            .map(|(n, _)| n);
        out.push(LintWarning {
            code: LintCode::MultipleTasks,
            message: format!("{total_tasks} task statements; state exactly one task"),
            location: first_extra,
        });
    }

    if !BRACKET_TOKEN.is_match(text) && !QUOTED_TERM.is_match(text) {
        out.push(LintWarning {
            code: LintCode::NoOutputSpec,
            message: "no replacement token or quoted replacement term specifies the output".into(),
            location: None,
        });
    }

    out.sort_by_key(|w| w.code);
    out
}
