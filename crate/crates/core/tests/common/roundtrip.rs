//! Round-trip oracle for the aligner, independent of its implementation.
//!
//! A redacted output `P0 M P1 M ... M Pk` (M the marker) is explained by
//! every split of the original into `P0 X1 P1 ... Xk Pk` where each `Xi`
//! holds at least one non-whitespace char. When all such splits replace the
//! same non-whitespace chars, the gold coverage is recoverable from the two
//! texts alone and the round trip must be exact.

use deid_core::corpus::AnnotatedSpan;
use deid_core::evaluation::{align, score, MatchMode};
use deid_core::redaction::apply_redaction;
use deid_core::PhiCategory;
use proptest::prelude::*;

pub const MARKER: &str = "[redacted]";

/// Per-char flags over all valid splits.
pub struct Splits {
    /// Some split replaces the char.
    pub in_x: Vec<bool>,
    /// Some split keeps the char.
    pub in_p: Vec<bool>,
}

impl Splits {
    /// Every split agrees on which non-whitespace chars are replaced.
    pub fn determined(&self, text: &[char]) -> bool {
        text.iter().enumerate().all(|(i, c)| c.is_whitespace() || !(self.in_x[i] && self.in_p[i]))
    }
}

/// Enumerates the valid splits of `text` for `output` by forward and
/// backward reachability. `None` when no split exists.
pub fn splits(text: &str, output: &str, marker: &str) -> Option<Splits> {
    let t: Vec<char> = text.chars().collect();
    let pieces: Vec<Vec<char>> = output.split(marker).map(|p| p.chars().collect()).collect();
    let (l, k) = (t.len(), pieces.len() - 1);
    let fits = |i: usize, pos: usize| {
        let p = &pieces[i];
        pos + p.len() <= l && t[pos..pos + p.len()] == p[..]
    };
    // next_ink[s]: first non-whitespace index at or after s.
    let mut next_ink = vec![l; l + 1];
    for s in (0..l).rev() {
        next_ink[s] = if t[s].is_whitespace() { next_ink[s + 1] } else { s };
    }

    // fwd[i][e]: piece i can end at e on a split of the prefix.
    let mut fwd = vec![vec![false; l + 1]; k + 1];
    if fits(0, 0) {
        fwd[0][pieces[0].len()] = true;
    }
    for i in 1..=k {
        for s in 0..=l {
            if !fwd[i - 1][s] {
                continue;
            }
            for e in (next_ink[s] + 1).min(l + 1)..=l {
                if fits(i, e) {
                    fwd[i][e + pieces[i].len()] = true;
                }
            }
        }
    }
    if !fwd[k][l] {
        return None;
    }
    // bwd[i][p]: piece i can start at p and the suffix still splits.
    let mut bwd = vec![vec![false; l + 1]; k + 1];
    if l >= pieces[k].len() && fits(k, l - pieces[k].len()) {
        bwd[k][l - pieces[k].len()] = true;
    }
    for i in (0..k).rev() {
        for p in 0..=l {
            if !fits(i, p) {
                continue;
            }
            let s = p + pieces[i].len();
            if s < l && (next_ink[s] + 1..=l).any(|e| bwd[i + 1][e]) {
                bwd[i][p] = true;
            }
        }
    }

    let mut dx = vec![0i64; l + 1];
    let mut dp = vec![0i64; l + 1];
    for i in 0..=k {
        let len = pieces[i].len();
        for p in 0..=l {
            if bwd[i][p] && fwd[i][p + len] && (i > 0 || p == 0) {
                dp[p] += 1;
                dp[p + len] -= 1;
            }
        }
        if i == 0 {
            continue;
        }
        for s in 0..=l {
            if !fwd[i - 1][s] {
                continue;
            }
            if let Some(e) = (next_ink[s] + 1..=l).rev().find(|&e| bwd[i][e]) {
                dx[s] += 1;
                dx[e] -= 1;
            }
        }
    }
    let sweep = |d: &[i64]| {
        let mut acc = 0;
        d[..l]
            .iter()
            .map(|v| {
                acc += v;
                acc > 0
            })
            .collect::<Vec<bool>>()
    };
    Some(Splits { in_x: sweep(&dx), in_p: sweep(&dp) })
}

pub fn span(text: &str, start: usize, end: usize, category: PhiCategory) -> AnnotatedSpan {
    let surface: String = text.chars().skip(start).take(end - start).collect();
    AnnotatedSpan { start, end, category, surface }
}

/// Texts from a small vocabulary with many repeats, spans cut at arbitrary
/// char positions.
pub fn adversarial_case() -> impl Strategy<Value = (String, Vec<AnnotatedSpan>)> {
    let word = prop_oneof![
        "[a-z]{1,8}",
        "[A-Z][a-z]{1,8}",
        "[0-9]{1,4}",
        Just(".".to_string()),
        Just(",".to_string()),
        "[0-9]{2}/[0-9]{2}/[0-9]{4}",
    ];
    let sep = prop_oneof![Just(" "), Just(" "), Just("\n"), Just(", "), Just("")];
    (proptest::collection::vec((word, sep), 1..40), proptest::collection::vec(any::<prop::sample::Index>(), 0..8))
        .prop_map(|(parts, picks)| {
            let text: String = parts.iter().map(|(w, s)| format!("{w}{s}")).collect();
            (text.clone(), cut_spans(&text, &picks))
        })
}

fn cut_spans(text: &str, picks: &[prop::sample::Index]) -> Vec<AnnotatedSpan> {
    let n = text.chars().count();
    let mut bounds: Vec<usize> = picks.iter().map(|p| p.index(n + 1)).collect();
    bounds.sort();
    bounds.dedup();
    bounds
        .chunks(2)
        .filter_map(|pair| match *pair {
            [s, e] => Some(span(text, s, e, PhiCategory::ALL[s % 7])),
            _ => None,
        })
        .filter(|sp| sp.surface.chars().any(|c| !c.is_whitespace()))
        .collect()
}

pub enum Outcome {
    /// Coverage determined by the texts; identity checked.
    Exact,
    /// Several splits explain the output; weaker invariants checked.
    Ambiguous,
}

/// Checks one case. Exact identity when the coverage is determined,
/// otherwise count conservation and consistency with some valid split.
pub fn check(text: &str, spans: &[AnnotatedSpan]) -> Result<Outcome, String> {
    let out = apply_redaction(text, spans, MARKER).map_err(|e| e.to_string())?;
    let a = align(text, &out, MARKER);
    let s = score(&a, spans, text, MatchMode::Strict).map_err(|e| e.to_string())?;
    let chars: Vec<char> = text.chars().collect();
    let sp = splits(text, &out, MARKER).ok_or_else(|| format!("oracle found no split for {out:?}"))?;
    let c = s.counts;
    if c.tp + c.fn_ != spans.len() as u64 {
        return Err(format!("tp+fn {} != {} for {out:?}", c.tp + c.fn_, spans.len()));
    }
    if sp.determined(&chars) {
        if (c.tp, c.fp, c.fn_) != (spans.len() as u64, 0, 0) {
            return Err(format!(
                "determined case: tp={} fp={} fn={} want tp={} for {out:?}",
                c.tp,
                c.fp,
                c.fn_,
                spans.len()
            ));
        }
        Ok(Outcome::Exact)
    } else {
        for seg in &a.replaced_segments {
            for (i, c) in chars.iter().enumerate().take(seg.src_end).skip(seg.src_start) {
                if !c.is_whitespace() && !sp.in_x[i] {
                    return Err(format!("segment covers kept char {i} for {out:?}"));
                }
            }
        }
        Ok(Outcome::Ambiguous)
    }
}
