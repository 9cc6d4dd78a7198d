//! Consistent synthetic surrogates for redacted PHI.
//!
//! Every span is replaced by a value of its category drawn from the same
//! pools as the synthetic generator. Dates move by one offset per document,
//! IDs and phone numbers keep their shape, and equal surfaces of one category
//! receive equal surrogates.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::category::PhiCategory;
use crate::corpus::AnnotatedSpan;
use crate::evaluation::align;
use crate::pools;
use crate::text::CharIndex;

/// Date offsets are drawn uniformly from this range of days (30 to 60 years).
pub const MIN_SHIFT_DAYS: i64 = 10_957;
pub const MAX_SHIFT_DAYS: i64 = 21_915;
/// Fresh draws tried before a colliding value gets a numeric suffix.
pub const MAX_RESAMPLES: usize = 16;
/// Surrogates at least this long must not occur anywhere in the original.
pub const MIN_TEXT_CHECK_CHARS: usize = 4;
/// Stand-in for spans whose category has no pool.
pub const OTHER_PLACEHOLDER: &str = "[other]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SurrogateError {
    #[error("span {index} [{start}, {end}) is outside text of length {len}")]
    SpanOutOfRange { index: usize, start: usize, end: usize, len: usize },
    #[error("spans {first} and {second} overlap")]
    OverlappingSpans { first: usize, second: usize },
    #[error("span {index} surface {surface:?} does not match the text")]
    SurfaceMismatch { index: usize, surface: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SurrogateWarning {
    /// The span's category has no pool; it got [`OTHER_PLACEHOLDER`].
    UnknownCategory { span_index: usize },
    /// Every resample collided; the value carries a disambiguating suffix.
    Disambiguated { span_index: usize, surrogate: String },
}

/// One consistency-key entry of the audit table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateAssignment {
    pub category: PhiCategory,
    pub original: String,
    pub surrogate: String,
    /// Indices of the spans that received this surrogate.
    pub spans: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateOutput {
    pub text: String,
    /// First-seen order of consistency keys.
    pub assignments: Vec<SurrogateAssignment>,
    /// Output char range of each input span's surrogate, in input order.
    pub placements: Vec<(usize, usize)>,
    pub date_shift_days: i64,
    pub warnings: Vec<SurrogateWarning>,
}

impl SurrogateOutput {
    /// The audit table as JSON. It links surrogates back to real surfaces, so
    /// callers must only write it when explicitly asked to.
    pub fn assignments_json(&self) -> String {
        serde_json::to_string_pretty(&self.assignments).expect("assignments serialize")
    }
}

/// Stable per-document seed, so documents can be processed in any order.
pub fn document_seed(seed: u64, doc_id: &str) -> u64 {
    // FNV-1a over the id, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in doc_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Replaces every span of `text` with a surrogate.
pub fn surrogate_replace(text: &str, spans: &[AnnotatedSpan], seed: u64) -> Result<SurrogateOutput, SurrogateError> {
    let idx = CharIndex::new(text);
    let len = idx.char_len();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end));
    for &i in &order {
        let s = &spans[i];
        if s.start >= s.end || s.end > len {
            return Err(SurrogateError::SpanOutOfRange { index: i, start: s.start, end: s.end, len });
        }
        if idx.slice(text, s.start, s.end) != Some(s.surface.as_str()) {
            return Err(SurrogateError::SurfaceMismatch { index: i, surface: s.surface.clone() });
        }
    }
    for w in order.windows(2) {
        if spans[w[0]].end > spans[w[1]].start {
            return Err(SurrogateError::OverlappingSpans { first: w[0].min(w[1]), second: w[0].max(w[1]) });
        }
    }

    let keys: Vec<(PhiCategory, &str)> = spans.iter().map(|s| (s.category, s.surface.as_str())).collect();
    let plan = assign(text, &keys, seed);
    let targets: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    Ok(plan.render(text, &targets, &order))
}

/// Fills the markers of a redacted model output with surrogates. Each
/// marker whose alignment recovered a non-empty original segment gets a
/// surrogate for that segment; its category comes from the gold span it
/// overlaps most, or OTHERS without one. Markers with nothing recovered are
/// left in place.
pub fn surrogate_markers(
    original: &str,
    redacted: &str,
    marker: &str,
    gold: &[AnnotatedSpan],
    seed: u64,
) -> SurrogateOutput {
    let alignment = align(original, redacted, marker);
    let chars: Vec<char> = original.chars().collect();
    let mut keys: Vec<(PhiCategory, String)> = Vec::new();
    let mut targets = Vec::new();
    let mut used_segments = HashSet::new();
    for (&seg_index, &pos) in alignment.marker_segments.iter().zip(&alignment.marker_positions) {
        let seg = alignment.replaced_segments[seg_index];
        // Several markers glued onto one segment share a single surrogate.
        if seg.is_empty() || !used_segments.insert(seg_index) {
            continue;
        }
        let category = gold
            .iter()
            .filter(|g| seg.overlaps(g.start, g.end))
            .max_by_key(|g| (g.end.min(seg.src_end) - g.start.max(seg.src_start), std::cmp::Reverse(g.category)))
            .map_or(PhiCategory::Others, |g| g.category);
        keys.push((category, chars[seg.src_start..seg.src_end].iter().collect()));
        targets.push(pos);
    }
    let borrowed: Vec<(PhiCategory, &str)> = keys.iter().map(|(c, s)| (*c, s.as_str())).collect();
    let plan = assign(original, &borrowed, seed);
    let order: Vec<usize> = (0..targets.len()).collect();
    plan.render(redacted, &targets, &order)
}

struct Plan {
    values: Vec<String>,
    assignments: Vec<SurrogateAssignment>,
    shift: i64,
    warnings: Vec<SurrogateWarning>,
}

impl Plan {
    /// Writes `values[i]` over `targets[i]` (char ranges of `text`, sorted
    /// by `order`).
    fn render(self, text: &str, targets: &[(usize, usize)], order: &[usize]) -> SurrogateOutput {
        let idx = CharIndex::new(text);
        let mut out = String::with_capacity(text.len());
        let mut placements = vec![(0, 0); targets.len()];
        let (mut byte_at, mut char_out) = (0, 0);
        let mut char_at = 0;
        for &i in order {
            let (s, e) = targets[i];
            let b0 = idx.byte_of(s).expect("validated range");
            out.push_str(&text[byte_at..b0]);
            char_out += s - char_at;
            let v = &self.values[i];
            out.push_str(v);
            let n = v.chars().count();
            placements[i] = (char_out, char_out + n);
            char_out += n;
            byte_at = idx.byte_of(e).expect("validated range");
            char_at = e;
        }
        out.push_str(&text[byte_at..]);
        SurrogateOutput {
            text: out,
            assignments: self.assignments,
            placements,
            date_shift_days: self.shift,
            warnings: self.warnings,
        }
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Picks one surrogate per consistency key. `original` is the text whose
/// surfaces surrogates must not reproduce.
fn assign(original: &str, keys: &[(PhiCategory, &str)], seed: u64) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let original_lc = original.to_lowercase();
    let surfaces: HashSet<String> = keys.iter().map(|(_, s)| normalize(s)).collect();
    // Short values occur inside unrelated words; only longer ones are
    // checked against the whole text.
    let collides = |v: &str, taken: &HashSet<String>| {
        let n = normalize(v);
        surfaces.contains(&n)
            || taken.contains(&n)
            || (v.chars().count() >= MIN_TEXT_CHECK_CHARS && original_lc.contains(&v.to_lowercase()))
    };

    let mut first_of: HashMap<(PhiCategory, &str), usize> = HashMap::new();
    let mut assignments: Vec<SurrogateAssignment> = Vec::new();
    let mut slot = Vec::with_capacity(keys.len());
    for (i, &(category, surface)) in keys.iter().enumerate() {
        let a = *first_of.entry((category, surface)).or_insert_with(|| {
            assignments.push(SurrogateAssignment {
                category,
                original: surface.to_string(),
                surrogate: String::new(),
                spans: Vec::new(),
            });
            assignments.len() - 1
        });
        assignments[a].spans.push(i);
        slot.push(a);
    }

    let mut warnings = Vec::new();
    let mut taken: HashSet<String> = HashSet::new();

    // Dates first: one document-wide offset, redrawn while any shifted date
    // reproduces an original surface.
    let date_keys: Vec<usize> =
        (0..assignments.len()).filter(|&a| assignments[a].category == PhiCategory::Date).collect();
    let mut shift = rng.random_range(MIN_SHIFT_DAYS..=MAX_SHIFT_DAYS);
    for _ in 0..MAX_RESAMPLES {
        let clash = date_keys
            .iter()
            .any(|&a| shift_date(&assignments[a].original, shift).is_some_and(|v| collides(&v, &HashSet::new())));
        if !clash {
            break;
        }
        shift = rng.random_range(MIN_SHIFT_DAYS..=MAX_SHIFT_DAYS);
    }

    for assignment in assignments.iter_mut() {
        let (category, surface) = (assignment.category, assignment.original.clone());
        let first_span = assignment.spans[0];
        if category == PhiCategory::Others {
            log::warn!("span {first_span} has category OTHERS; using a generic placeholder");
            warnings.push(SurrogateWarning::UnknownCategory { span_index: first_span });
            assignment.surrogate = OTHER_PLACEHOLDER.to_string();
            continue;
        }
        let shifted = (category == PhiCategory::Date).then(|| shift_date(&surface, shift)).flatten();
        let mut value = match shifted {
            Some(v) => v,
            None => draw(category, &surface, &mut rng),
        };
        let mut tries = 0;
        while collides(&value, &taken) && tries < MAX_RESAMPLES {
            value = draw(category, &surface, &mut rng);
            tries += 1;
        }
        if collides(&value, &taken) {
            let base = value.clone();
            let mut k = 2;
            while collides(&value, &taken) {
                value = format!("{base}-{k}");
                k += 1;
            }
            warnings.push(SurrogateWarning::Disambiguated { span_index: first_span, surrogate: value.clone() });
        }
        taken.insert(normalize(&value));
        assignment.surrogate = value;
    }

    let values = slot.iter().map(|&a| assignments[a].surrogate.clone()).collect();
    Plan { values, assignments, shift, warnings }
}

/// A fresh value for `category` shaped after `surface` where that matters.
fn draw(category: PhiCategory, surface: &str, rng: &mut ChaCha8Rng) -> String {
    let value = match category {
        PhiCategory::Name => {
            if surface.split_whitespace().count() <= 1 {
                pools::LAST_NAMES.choose(rng).expect("non-empty pool").to_string()
            } else {
                pools::name(rng)
            }
        }
        PhiCategory::Age => reshape_age(surface, rng),
        PhiCategory::Contact if surface.contains('@') => pools::email(rng),
        PhiCategory::Contact | PhiCategory::Id => reshape(surface, rng),
        other => pools::draw(other, rng),
    };
    let letters = surface.chars().filter(|c| c.is_alphabetic()).count();
    if letters > 1 && surface.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase) {
        value.to_uppercase()
    } else {
        value
    }
}

/// Digit for digit, letter for letter of the same case, everything else
/// kept. A digit run keeps a non-zero leading digit.
fn reshape(surface: &str, rng: &mut ChaCha8Rng) -> String {
    let mut prev_digit = false;
    surface
        .chars()
        .map(|c| {
            let out = if c.is_ascii_digit() {
                let lead_nonzero = !prev_digit && c != '0';
                let d: u8 = if lead_nonzero { rng.random_range(1..10) } else { rng.random_range(0..10) };
                char::from(b'0' + d)
            } else if c.is_ascii_uppercase() {
                char::from(b'A' + rng.random_range(0..26u8))
            } else if c.is_ascii_lowercase() {
                char::from(b'a' + rng.random_range(0..26u8))
            } else {
                c
            };
            prev_digit = c.is_ascii_digit();
            out
        })
        .collect()
}

static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

/// Replaces each number with a random age of the same digit count; falls
/// back to a pool age when the surface holds no number.
fn reshape_age(surface: &str, rng: &mut ChaCha8Rng) -> String {
    if !DIGITS.is_match(surface) {
        return pools::age(rng);
    }
    DIGITS
        .replace_all(surface, |c: &regex::Captures| match c[0].len() {
            1 => rng.random_range(1..10u32).to_string(),
            2 => rng.random_range(18..90u32).to_string(),
            n => reshape(&"1".repeat(n), rng),
        })
        .into_owned()
}

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

static MDY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2})([/-])(\d{1,2})([/-])(\d{4}|\d{2})$").expect("valid regex"));
static ISO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{4})-(\d{1,2})-(\d{1,2})$").expect("valid regex"));
static MD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{1,2})$").expect("valid regex"));
static MY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{4})$").expect("valid regex"));
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{4})$").expect("valid regex"));
static NAMED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?i)(jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)([a-z]*)(\.?)(\s+)(\d{1,2})(,?)(\s+)(\d{4})$",
    )
    .expect("valid regex")
});

fn pad(n: u32, like: &str) -> String {
    if like.len() >= 2 {
        format!("{n:02}")
    } else {
        n.to_string()
    }
}

fn shift(d: NaiveDate, days: i64) -> Option<NaiveDate> {
    d.checked_add_signed(Duration::days(days))
}

/// Moves a date surface `days` forward, keeping its format. `None` for
/// surfaces that are not a recognized date.
pub fn shift_date(surface: &str, days: i64) -> Option<String> {
    let s = surface.trim();
    let num = |x: &str| x.parse::<u32>().ok();
    if let Some(c) = MDY.captures(s) {
        let (m, d) = (num(&c[1])?, num(&c[3])?);
        let two_digit = c[5].len() == 2;
        let y = num(&c[5])? as i32;
        let y = if two_digit {
            if y < 50 {
                2000 + y
            } else {
                1900 + y
            }
        } else {
            y
        };
        let out = shift(NaiveDate::from_ymd_opt(y, m, d)?, days)?;
        let year = if two_digit { format!("{:02}", out.year().rem_euclid(100)) } else { out.year().to_string() };
        return Some(format!("{}{}{}{}{}", pad(out.month(), &c[1]), &c[2], pad(out.day(), &c[3]), &c[4], year));
    }
    if let Some(c) = ISO.captures(s) {
        let out = shift(NaiveDate::from_ymd_opt(num(&c[1])? as i32, num(&c[2])?, num(&c[3])?)?, days)?;
        return Some(format!("{}-{}-{}", out.year(), pad(out.month(), &c[2]), pad(out.day(), &c[3])));
    }
    if let Some(c) = MD.captures(s) {
        // Leap reference year so 02/29 stays valid.
        let out = shift(NaiveDate::from_ymd_opt(2000, num(&c[1])?, num(&c[2])?)?, days)?;
        return Some(format!("{}/{}", pad(out.month(), &c[1]), pad(out.day(), &c[2])));
    }
    if let Some(c) = MY.captures(s) {
        let out = shift(NaiveDate::from_ymd_opt(num(&c[2])? as i32, num(&c[1])?, 1)?, days)?;
        return Some(format!("{}/{}", pad(out.month(), &c[1]), out.year()));
    }
    if let Some(c) = YEAR.captures(s) {
        let y = num(&c[1])? as i32;
        let out = shift(NaiveDate::from_ymd_opt(y, 7, 1)?, days)?;
        return Some(out.year().to_string());
    }
    if let Some(c) = NAMED.captures(s) {
        let abbr = c[1].to_lowercase();
        let m = MONTHS.iter().position(|name| name.to_lowercase().starts_with(&abbr[..3]))? as u32 + 1;
        let out = shift(NaiveDate::from_ymd_opt(num(&c[8])? as i32, m, num(&c[5])?)?, days)?;
        let full = MONTHS[out.month0() as usize];
        let name = if c[2].is_empty() { &full[..3] } else { full };
        let name = if c[1].chars().all(|ch| ch.is_uppercase()) && c[1].len() > 1 {
            name.to_uppercase()
        } else {
            name.to_string()
        };
        return Some(format!("{name}{}{}{}{}{}{}", &c[3], &c[4], pad(out.day(), &c[5]), &c[6], &c[7], out.year()));
    }
    None
}
