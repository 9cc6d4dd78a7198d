//! Token alignment between an original note and a redacted rendition.
//!
//! Both texts are split into alphanumeric runs and single punctuation
//! characters. Occurrences of the marker in the output become marker items.
//! A dynamic program over (original token, output item, marker state) picks
//! the alignment with the most matched tokens and, among those, the fewest
//! original tokens dropped without a marker plus markers that replaced
//! nothing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub src_start: usize,
    pub src_end: usize,
}

impl Segment {
    pub fn is_empty(&self) -> bool {
        self.src_start == self.src_end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.src_start < end && start < self.src_end
    }
}

/// A surviving original token and where it landed in the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub src_start: usize,
    pub src_end: usize,
    pub out_start: usize,
    pub out_end: usize,
    /// The output token is a bare marker word that happened to match an
    /// identical original word.
    pub marker_like: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// Disjoint, sorted. Empty segments stand for markers that replaced
    /// nothing.
    pub replaced_segments: Vec<Segment>,
    pub preserved_map: Vec<TokenPair>,
    /// For each output marker in order, the index of its segment.
    pub marker_segments: Vec<usize>,
    /// For each output marker in order, its `[start, end)` char range in the
    /// output.
    pub marker_positions: Vec<(usize, usize)>,
    /// Original runs that vanished from the output without a marker.
    pub dropped: Vec<Segment>,
}

impl Alignment {
    pub fn marker_count(&self) -> usize {
        self.marker_segments.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Alphanumeric runs and single non-space punctuation chars, with char
/// offsets.
pub(crate) fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut run: Option<(usize, String)> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            run.get_or_insert_with(|| (pos, String::new())).1.push(c);
        } else {
            if let Some((s, t)) = run.take() {
                out.push(Token { start: s, end: pos, text: t });
            }
            if !c.is_whitespace() {
                out.push(Token { start: pos, end: pos + 1, text: c.to_string() });
            }
        }
        pos += 1;
    }
    if let Some((s, t)) = run {
        out.push(Token { start: s, end: pos, text: t });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ItemKind {
    Word,
    /// Literal marker occurrence.
    Marker,
    /// Bare marker word, e.g. `redacted` for marker `[redacted]`.
    BareMarker,
}

#[derive(Debug, Clone)]
struct Item {
    kind: ItemKind,
    start: usize,
    end: usize,
    text: String,
    /// Literal markers folded into this item.
    markers: usize,
    /// For marker items, the visible text around and between the folded
    /// markers: `markers + 1` entries, the first glued on the left, the last
    /// glued on the right.
    frags: Vec<String>,
    /// Output char ranges of the folded markers.
    marker_pos: Vec<(usize, usize)>,
}

impl Item {
    fn word(kind: ItemKind, start: usize, end: usize, text: String) -> Self {
        let markers = usize::from(kind != ItemKind::Word);
        let frags = if markers > 0 { vec![String::new(); 2] } else { Vec::new() };
        let marker_pos = if markers > 0 { vec![(start, end)] } else { Vec::new() };
        Item { kind, start, end, text, markers, frags, marker_pos }
    }

    fn is_marker(&self) -> bool {
        self.kind != ItemKind::Word
    }

    fn prefix(&self) -> &str {
        self.frags.first().map_or("", String::as_str)
    }

    fn suffix(&self) -> &str {
        self.frags.last().map_or("", String::as_str)
    }
}

/// The alphanumeric core of a marker (`[redacted]` gives `redacted`), when
/// it is a single word.
pub(crate) fn bare_word(marker: &str) -> Option<String> {
    let core = marker.trim_matches(|c: char| !c.is_alphanumeric());
    (!core.is_empty() && core.chars().all(char::is_alphanumeric)).then(|| core.to_lowercase())
}

fn output_items(output: &str, marker: &str) -> Vec<Item> {
    let chars: Vec<char> = output.chars().collect();
    let lower: Vec<char> = output.to_lowercase().chars().collect();
    let marker_lc: Vec<char> = marker.to_lowercase().chars().collect();
    let bare = bare_word(marker);
    // Case folding can change length; only use the folded view when it does not.
    let fold_ok = lower.len() == chars.len();

    let mut items = Vec::new();
    let mut i = 0;
    let mut word_start = None;
    let flush_word = |items: &mut Vec<Item>, ws: &mut Option<usize>, end: usize| {
        if let Some(s) = ws.take() {
            let text: String = chars[s..end].iter().collect();
            let kind = match &bare {
                Some(b) if text.to_lowercase() == *b => ItemKind::BareMarker,
                _ => ItemKind::Word,
            };
            items.push(Item::word(kind, s, end, text));
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            flush_word(&mut items, &mut word_start, i);
            i += 1;
            continue;
        }
        let is_marker_here = !marker_lc.is_empty()
            && i + marker_lc.len() <= chars.len()
            && if fold_ok {
                lower[i..i + marker_lc.len()] == marker_lc[..]
            } else {
                chars[i..i + marker_lc.len()].iter().copied().eq(marker.chars())
            };
        if is_marker_here {
            flush_word(&mut items, &mut word_start, i);
            let end = i + marker_lc.len();
            items.push(Item::word(ItemKind::Marker, i, end, marker.to_string()));
            i = end;
            continue;
        }
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
        } else {
            flush_word(&mut items, &mut word_start, i);
            items.push(Item::word(ItemKind::Word, i, i + 1, c.to_string()));
        }
        i += 1;
    }
    flush_word(&mut items, &mut word_start, chars.len());
    glue_fragments(items)
}

/// Folds alphanumeric words and markers that touch a marker into it. Such a
/// word is usually the visible remainder of a partly replaced original word;
/// it is kept as the item's prefix or suffix so the alignment can check it
/// against the absorbed text.
fn glue_fragments(items: Vec<Item>) -> Vec<Item> {
    let alnum = |it: &Item| it.kind != ItemKind::Marker && it.text.chars().all(char::is_alphanumeric);
    let mut out: Vec<Item> = Vec::with_capacity(items.len());
    for it in items {
        if let Some(last) = out.last_mut() {
            if last.end == it.start {
                if last.kind == ItemKind::Marker && (alnum(&it) || it.kind == ItemKind::Marker) {
                    last.end = it.end;
                    last.text.push_str(&it.text);
                    last.markers += it.markers;
                    let tail = last.frags.last_mut().expect("marker items carry fragments");
                    last.marker_pos.extend(&it.marker_pos);
                    if it.kind == ItemKind::Marker {
                        let mut rest = it.frags.into_iter();
                        tail.push_str(&rest.next().unwrap_or_default());
                        last.frags.extend(rest);
                    } else {
                        tail.push_str(&it.text);
                    }
                    continue;
                }
                if it.kind == ItemKind::Marker && alnum(last) {
                    let prefix = std::mem::take(&mut last.text);
                    let mut frags = it.frags;
                    frags[0] = format!("{prefix}{}", frags[0]);
                    *last = Item {
                        kind: ItemKind::Marker,
                        start: last.start,
                        end: it.end,
                        text: format!("{prefix}{}", it.text),
                        markers: it.markers,
                        frags,
                        marker_pos: it.marker_pos,
                    };
                    continue;
                }
            }
        }
        out.push(it);
    }
    out
}

const NEG: i64 = i64::MIN / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    None,
    Match,
    Delete,
    InsertMarker,
    InsertWord,
}

fn tokens_match(a: &Token, b: &Item) -> bool {
    match b.kind {
        ItemKind::Word | ItemKind::BareMarker => a.text == b.text,
        ItemKind::Marker => false,
    }
}

/// A run of original tokens replaced by one output marker item.
struct Run {
    item: usize,
    tokens: Vec<usize>,
    /// Where an empty run sits in the original.
    at: usize,
}

/// Aligns `redacted` against `original`. Never fails; degenerate inputs give
/// empty alignments.
pub fn align(original: &str, redacted: &str, marker: &str) -> Alignment {
    let src = tokenize(original);
    if let Some(exact) = exact_alignment(original, &src, redacted, marker) {
        return exact;
    }
    let out = output_items(redacted, marker);
    let (n, m) = (src.len(), out.len());

    // Common prefix and suffix of plain words always align one-to-one.
    let mut pre = 0;
    while pre < n && pre < m && out[pre].kind == ItemKind::Word && tokens_match(&src[pre], &out[pre]) {
        pre += 1;
    }
    let mut suf = 0;
    while suf < n - pre
        && suf < m - pre
        && out[m - 1 - suf].kind == ItemKind::Word
        && tokens_match(&src[n - 1 - suf], &out[m - 1 - suf])
    {
        suf += 1;
    }
    let ops = dp_ops(&src[pre..n - suf], &out[pre..m - suf]);

    let mut alignment = Alignment::default();
    for k in 0..pre {
        alignment.preserved_map.push(pair(&src[k], &out[k]));
    }

    let (mut i, mut j) = (pre, pre);
    let mut open: Option<Run> = None;
    let mut runs: Vec<Run> = Vec::new();
    let mut dropped: Option<Segment> = None;
    let mut cursor = if pre > 0 { src[pre - 1].end } else { 0 };
    for op in ops {
        if op != Op::Delete {
            runs.extend(open.take());
            alignment.dropped.extend(dropped.take());
        }
        match op {
            Op::Match => {
                alignment.preserved_map.push(pair(&src[i], &out[j]));
                cursor = src[i].end;
                i += 1;
                j += 1;
            }
            Op::Delete => {
                let t = &src[i];
                match open.as_mut() {
                    Some(run) => run.tokens.push(i),
                    None => {
                        let d = dropped.get_or_insert(Segment { src_start: t.start, src_end: t.end });
                        d.src_end = t.end;
                    }
                }
                cursor = t.end;
                i += 1;
            }
            Op::InsertMarker => {
                open = Some(Run { item: j, tokens: Vec::new(), at: cursor });
                j += 1;
            }
            Op::InsertWord => j += 1,
            Op::None => unreachable!("edit script never contains None"),
        }
    }
    runs.extend(open.take());
    alignment.dropped.extend(dropped.take());
    for k in (n - suf)..n {
        alignment.preserved_map.push(pair(&src[k], &out[m - suf + (k - (n - suf))]));
    }

    let chars: Vec<char> = original.chars().collect();
    let mut marker_segments = Vec::new();
    for run in runs {
        let item = &out[run.item];
        if let (Some(&f), Some(&l)) = (run.tokens.first(), run.tokens.last()) {
            // Tokens equal to a glued fragment survived verbatim.
            if !item.prefix().is_empty() && src[f].text == item.prefix() {
                let len = item.prefix().chars().count();
                alignment.preserved_map.push(fragment_pair(&src[f], item.start, item.start + len));
            }
            if !item.suffix().is_empty() && src[l].text == item.suffix() && (f != l || item.prefix().is_empty()) {
                let len = item.suffix().chars().count();
                alignment.preserved_map.push(fragment_pair(&src[l], item.end - len, item.end));
            }
            let (lo, hi) = (src[f].start, src[l].end);
            alignment.marker_positions.extend(&item.marker_pos);
            if let Some(parts) = split_region(&chars[lo..hi], &item.frags) {
                for (s, e) in parts {
                    marker_segments.push(alignment.replaced_segments.len());
                    alignment.replaced_segments.push(trim_segment(&chars, lo + s, lo + e));
                }
                continue;
            }
            marker_segments.extend(std::iter::repeat_n(alignment.replaced_segments.len(), item.markers));
            alignment.replaced_segments.push(trim_segment(&chars, lo, hi));
            continue;
        }
        alignment.marker_positions.extend(&item.marker_pos);
        for _ in 0..item.markers {
            marker_segments.push(alignment.replaced_segments.len());
            alignment.replaced_segments.push(Segment { src_start: run.at, src_end: run.at });
        }
    }
    alignment.preserved_map.sort_by_key(|p| (p.src_start, p.out_start));
    alignment.marker_segments = marker_segments;
    alignment
}

fn pair(t: &Token, it: &Item) -> TokenPair {
    TokenPair {
        src_start: t.start,
        src_end: t.end,
        out_start: it.start,
        out_end: it.end,
        marker_like: it.kind == ItemKind::BareMarker,
    }
}

/// Alignment for outputs that are the original with some substrings
/// replaced by the literal marker and nothing else changed. `None` when the
/// output is not of that form.
fn exact_alignment(original: &str, src: &[Token], redacted: &str, marker: &str) -> Option<Alignment> {
    if marker.is_empty() {
        return None;
    }
    let chars: Vec<char> = original.chars().collect();
    let pieces: Vec<String> = redacted.split(marker).map(str::to_string).collect();
    let parts = split_region(&chars, &pieces)?;

    let mut alignment = Alignment::default();
    // Kept ranges of the original and where each starts in the output.
    let marker_len = marker.chars().count();
    let mut kept = Vec::with_capacity(pieces.len());
    let (mut src_at, mut out_at) = (0, 0);
    for (i, piece) in pieces.iter().enumerate() {
        let len = piece.chars().count();
        kept.push((src_at, src_at + len, out_at));
        out_at += len + marker_len;
        if let Some(&(s, e)) = parts.get(i) {
            alignment.marker_positions.push((out_at - marker_len, out_at));
            alignment.marker_segments.push(alignment.replaced_segments.len());
            alignment.replaced_segments.push(trim_segment(&chars, s, e));
            src_at = e;
        }
    }
    let bare = bare_word(marker);
    for t in src {
        if let Some(&(s, _, o)) = kept.iter().find(|&&(s, e, _)| s <= t.start && t.end <= e) {
            alignment.preserved_map.push(TokenPair {
                src_start: t.start,
                src_end: t.end,
                out_start: o + t.start - s,
                out_end: o + t.end - s,
                marker_like: bare.as_deref() == Some(t.text.to_lowercase().as_str()),
            });
        }
    }
    Some(alignment)
}

/// Drops leading and trailing whitespace unless nothing else is left.
fn trim_segment(chars: &[char], start: usize, end: usize) -> Segment {
    let (mut s, mut e) = (start, end);
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s == e {
        Segment { src_start: start, src_end: end }
    } else {
        Segment { src_start: s, src_end: e }
    }
}

/// Splits `region` as `frags[0] X1 frags[1] ... Xk frags[k]`, returning the
/// `Xi` ranges. Prefers splits where each `Xi` holds a non-whitespace char,
/// then non-empty ones, then any; places each fragment as early as possible.
fn split_region(region: &[char], frags: &[String]) -> Option<Vec<(usize, usize)>> {
    let frags: Vec<Vec<char>> = frags.iter().map(|f| f.chars().collect()).collect();
    [Fill::Ink, Fill::NonEmpty, Fill::Any].into_iter().find_map(|fill| split_with(region, &frags, fill))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Fill {
    Ink,
    NonEmpty,
    Any,
}

fn split_with(r: &[char], frags: &[Vec<char>], fill: Fill) -> Option<Vec<(usize, usize)>> {
    let (l, k) = (r.len(), frags.len().checked_sub(1)?);
    if frags.iter().map(Vec::len).sum::<usize>() > l {
        return None;
    }
    let fits = |i: usize, p: usize| p + frags[i].len() <= l && r[p..p + frags[i].len()] == frags[i][..];
    // Smallest end for a replaced run starting at s.
    let mut min_end = vec![l + 1; l + 2];
    for s in (0..=l).rev() {
        min_end[s] = match fill {
            Fill::Any => s,
            Fill::NonEmpty => s + 1,
            Fill::Ink if s < l && !r[s].is_whitespace() => s + 1,
            Fill::Ink => min_end[s + 1],
        };
    }
    // next[i][x]: smallest p >= x where fragment i can start and the rest of
    // the region still splits; `NONE` if there is none.
    const NONE: usize = usize::MAX;
    let mut next = vec![vec![NONE; l + 2]; k + 1];
    let last = l - frags[k].len();
    for x in (0..=l).rev() {
        next[k][x] = if x == last && fits(k, last) { x } else { next[k][x + 1] };
    }
    for i in (0..k).rev() {
        for p in (0..=l).rev() {
            let ok = fits(i, p) && {
                let s = p + frags[i].len();
                min_end[s] <= l && next[i + 1][min_end[s]] != NONE
            };
            next[i][p] = if ok { p } else { next[i][p + 1] };
        }
    }
    if next[0][0] != 0 {
        return None;
    }
    let mut parts = Vec::with_capacity(k);
    let mut s = frags[0].len();
    for row in &next[1..] {
        let e = row[*min_end.get(s)?];
        if e == NONE {
            return None;
        }
        parts.push((s, e));
        s = e + frags[parts.len()].len();
    }
    Some(parts)
}

fn fragment_pair(t: &Token, out_start: usize, out_end: usize) -> TokenPair {
    TokenPair { src_start: t.start, src_end: t.end, out_start, out_end, marker_like: false }
}

// Marker states. A marker absorbs original tokens after it opens; tokens
// equal to its glued prefix or suffix fragment survived rather than being
// replaced, so a run of only those leaves the marker empty.
const FREE: usize = 0;
const OPENED: usize = 1;
/// Only a token equal to the prefix fragment absorbed.
const PREFIX_ONLY: usize = 2;
/// One token equal to the suffix fragment absorbed, nothing replaced yet.
const SUFFIX_ONLY: usize = 3;
/// Replaced content, last token not ending in the suffix fragment.
const CONTENT_BAD_END: usize = 4;
/// Replaced content, last token ending in the suffix fragment.
const CONTENT_OK_END: usize = 5;
const STATES: usize = 6;

/// Edit script for the trimmed middle section. Maximizes matches, then
/// minimizes dropped tokens, markers that absorb nothing and absorbed runs
/// inconsistent with the marker's glued fragments, then minimizes boundaries
/// where the output and the original disagree on whether two neighbours
/// touch without whitespace.
fn dp_ops(a: &[Token], b: &[Item]) -> Vec<Op> {
    let (n, m) = (a.len(), b.len());
    if n == 0 && m == 0 {
        return Vec::new();
    }
    let touch_a: Vec<bool> = (0..n).map(|i| i > 0 && a[i - 1].end == a[i].start).collect();
    let touch_b: Vec<bool> = (0..m).map(|j| j > 0 && b[j - 1].end == b[j].start).collect();
    let gap = |i: usize, j: usize| i64::from(i > 0 && j > 0 && touch_a[i] != touch_b[j]);
    // Each weight exceeds any possible total of the tiers below it.
    let unit = (n + m + 2) as i64;
    let big = unit * (n + 3 * m + 1) as i64;
    let w = m + 1;
    let at = |i: usize, j: usize, s: usize| (i * w + j) * STATES + s;
    let mut score = vec![NEG; (n + 1) * w * STATES];
    let mut back = vec![(Op::None, 0u8); (n + 1) * w * STATES];
    score[at(0, 0, FREE)] = 0;
    let leave_cost = |s: usize| unit * i64::from(s == CONTENT_BAD_END);

    for i in 0..=n {
        for j in 0..=m {
            for s in 0..STATES {
                let cur = score[at(i, j, s)];
                if cur == NEG {
                    continue;
                }
                let mut relax = |ni: usize, nj: usize, ns: usize, val: i64, op: Op| {
                    let k = at(ni, nj, ns);
                    if val > score[k] {
                        score[k] = val;
                        back[k] = (op, s as u8);
                    }
                };
                if i < n && j < m && tokens_match(&a[i], &b[j]) {
                    relax(i + 1, j + 1, FREE, cur + big - leave_cost(s) - gap(i, j), Op::Match);
                }
                if i < n {
                    let (ns, cost) = if s == FREE {
                        (FREE, unit)
                    } else {
                        let item = &b[j - 1];
                        let t = a[i].text.as_str();
                        let (prefix, suffix) = (item.prefix(), item.suffix());
                        let content = if t.ends_with(suffix) { CONTENT_OK_END } else { CONTENT_BAD_END };
                        // Entering content refunds the empty-marker charge.
                        match s {
                            OPENED => {
                                let first = gap(i, j - 1);
                                if !suffix.is_empty() && t == suffix && t.starts_with(prefix) {
                                    (SUFFIX_ONLY, first)
                                } else if !prefix.is_empty() && t == prefix {
                                    (PREFIX_ONLY, first)
                                } else {
                                    (content, unit * (i64::from(!t.starts_with(prefix)) - 1) + first)
                                }
                            }
                            PREFIX_ONLY if !suffix.is_empty() && t == suffix => (SUFFIX_ONLY, 0),
                            PREFIX_ONLY | SUFFIX_ONLY => (content, -unit),
                            _ => (content, 0),
                        }
                    };
                    relax(i + 1, j, ns, cur - cost, Op::Delete);
                }
                if j < m {
                    if b[j].is_marker() {
                        relax(i, j + 1, OPENED, cur - unit - leave_cost(s), Op::InsertMarker);
                    } else {
                        relax(i, j + 1, FREE, cur - leave_cost(s), Op::InsertWord);
                    }
                }
            }
        }
    }

    let mut s = (0..STATES)
        .max_by_key(|&s| (score[at(n, m, s)].saturating_sub(leave_cost(s)), std::cmp::Reverse(s)))
        .expect("non-empty state set");
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let (op, ps) = back[at(i, j, s)];
        ops.push(op);
        match op {
            Op::Match => {
                i -= 1;
                j -= 1;
            }
            Op::Delete => i -= 1,
            Op::InsertMarker | Op::InsertWord => j -= 1,
            Op::None => unreachable!("every reachable cell has a predecessor"),
        }
        s = ps as usize;
    }
    ops.reverse();
    ops
}
