//! The 18 HIPAA identifiers and their assignment to dataset PHI categories
//! by similarity voting.

use std::collections::BTreeSet;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::category::PhiCategory;
use crate::llm_client::{ChatClient, ChatMessage, ChatRequest, ClientError};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HipaaIdentifier {
    pub index: u8,
    pub label: String,
}

fn ident(index: u8, label: &str) -> HipaaIdentifier {
    HipaaIdentifier { index, label: label.to_string() }
}

/// Indices 1..=18, labels verbatim.
pub static HIPAA_IDENTIFIERS: LazyLock<Vec<HipaaIdentifier>> = LazyLock::new(|| {
    vec![
        ident(1, "Names"),
        ident(2, "All geographical address elements smaller than state"),
        ident(3, "All data elements related the individual (except year)"),
        ident(4, "Phone numbers"),
        ident(5, "Fax numbers"),
        ident(6, "Email addresses"),
        ident(7, "Social security numbers"),
        ident(8, "Medical record numbers"),
        ident(9, "Health plan beneficiary numbers"),
        ident(10, "Account numbers"),
        ident(11, "Certificate numbers"),
        ident(12, "Vehicle serial numbers and identifiers"),
        ident(13, "Device serial numbers and identifiers"),
        ident(14, "Web resource locators (URLs) and links"),
        ident(15, "IP addresses"),
        ident(16, "Biometric identifiers (e.g. fingerprint)"),
        ident(17, "Full face photographic images"),
        ident(18, "Any unique identifying number, code, or characteristic"),
    ]
});

/// One identifier's vote. Serializes flat as
/// `{index, label, category, score, threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMapping {
    #[serde(flatten)]
    pub identifier: HipaaIdentifier,
    pub category: PhiCategory,
    pub score: f64,
    pub threshold: f64,
}

/// Descriptive phrases a category is scored against; the category's score is
/// the best score over its phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGloss {
    pub category: PhiCategory,
    pub phrases: Vec<String>,
}

impl CategoryGloss {
    pub fn new(category: PhiCategory, phrases: &[&str]) -> Self {
        CategoryGloss { category, phrases: phrases.iter().map(|s| s.to_string()).collect() }
    }
}

/// Glosses for the seven concrete categories, phrased after the i2b2 2014
/// PHI sub-types.
pub fn default_glosses() -> Vec<CategoryGloss> {
    use PhiCategory::*;
    vec![
        CategoryGloss::new(Name, &["names", "patient doctor and user names"]),
        CategoryGloss::new(Profession, &["profession or occupation"]),
        CategoryGloss::new(
            Location,
            &[
                "geographical address elements",
                "street city state zip and country",
                "hospital organization department and room names",
            ],
        ),
        CategoryGloss::new(Age, &["age in years"]),
        CategoryGloss::new(Date, &["dates related to the individual"]),
        CategoryGloss::new(
            Contact,
            &[
                "phone fax email contact information",
                "phone numbers",
                "fax numbers",
                "email addresses",
                "web urls and ip addresses",
            ],
        ),
        CategoryGloss::new(
            Id,
            &[
                "social security numbers",
                "medical record numbers",
                "health plan numbers",
                "account numbers",
                "license and certificate numbers",
                "vehicle and device identifiers",
                "any other identifying number or code",
            ],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("identifier list is empty")]
    NoIdentifiers,
    #[error("category list is empty")]
    NoCategories,
    #[error("OTHERS cannot be a voting category")]
    OthersInCategories,
    #[error("category {0} has no gloss phrases")]
    EmptyGloss(PhiCategory),
    #[error("scorer failed: {0}")]
    Scorer(#[from] ClientError),
}

/// Text-pair similarity in [0, 1], symmetric, 1.0 on equal normalized input.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64, ClientError>;
}

impl<F> SimilarityScorer for F
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn score(&self, a: &str, b: &str) -> Result<f64, ClientError> {
        Ok(self(a, b))
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn tokens(norm: &str) -> BTreeSet<&str> {
    norm.split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit())).filter(|t| !t.is_empty()).collect()
}

fn trigrams(norm: &str) -> BTreeSet<Vec<char>> {
    let chars: Vec<char> = norm.chars().collect();
    if chars.is_empty() {
        return BTreeSet::new();
    }
    if chars.len() < 3 {
        return BTreeSet::from([chars]);
    }
    chars.windows(3).map(<[char]>::to_vec).collect()
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean of token-set Jaccard (lowercased alphanumeric tokens) and
/// character-trigram Jaccard over the lowercased, whitespace-collapsed
/// strings. Strings shorter than three characters form a single gram.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let (na, nb) = (normalize(a), normalize(b));
    if na == nb {
        return 1.0;
    }
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    (jaccard(&tokens(&na), &tokens(&nb)) + jaccard(&trigrams(&na), &trigrams(&nb))) / 2.0
}

/// Offline default scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl SimilarityScorer for LexicalScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64, ClientError> {
        Ok(lexical_similarity(a, b))
    }
}

/// Scores every identifier against every category gloss and assigns the
/// argmax category, or OTHERS when the best score is below `threshold`.
/// Ties go to the lowest category ordinal.
pub fn map_identifiers(
    identifiers: &[HipaaIdentifier],
    categories: &[CategoryGloss],
    scorer: &dyn SimilarityScorer,
    threshold: f64,
) -> Result<Vec<CategoryMapping>, MapError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MapError::InvalidThreshold(threshold));
    }
    if identifiers.is_empty() {
        return Err(MapError::NoIdentifiers);
    }
    if categories.is_empty() {
        return Err(MapError::NoCategories);
    }
    if let Some(g) = categories.iter().find(|g| g.phrases.is_empty()) {
        return Err(MapError::EmptyGloss(g.category));
    }
    if categories.iter().any(|g| g.category == PhiCategory::Others) {
        return Err(MapError::OthersInCategories);
    }

    let mut out = Vec::with_capacity(identifiers.len());
    for identifier in identifiers {
        let mut best: Option<(PhiCategory, f64)> = None;
        for gloss in categories {
            let mut score = 0.0f64;
            for phrase in &gloss.phrases {
                score = score.max(scorer.score(&identifier.label, phrase)?.clamp(0.0, 1.0));
            }
            best = match best {
                Some((c, s)) if s > score || (s == score && c.ordinal() <= gloss.category.ordinal()) => Some((c, s)),
                _ => Some((gloss.category, score)),
            };
        }
        let (category, score) = best.expect("categories non-empty");
        out.push(CategoryMapping {
            identifier: identifier.clone(),
            category: if score >= threshold { category } else { PhiCategory::Others },
            score,
            threshold,
        });
    }
    Ok(out)
}

/// `map_identifiers` over the 18 identifiers with the default glosses and
/// the lexical scorer.
pub fn default_mapping(threshold: f64) -> Result<Vec<CategoryMapping>, MapError> {
    map_identifiers(&HIPAA_IDENTIFIERS, &default_glosses(), &LexicalScorer, threshold)
}

pub fn mapping_to_json(mappings: &[CategoryMapping]) -> String {
    serde_json::to_string_pretty(mappings).expect("mapping serialization cannot fail")
}

static FIRST_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("static regex"));

/// Reads the first number in a 0–100 rating reply and scales it to [0, 1].
pub fn parse_rating(reply: &str) -> Option<f64> {
    let n: f64 = FIRST_NUMBER.find(reply)?.as_str().parse().ok()?;
    Some((n / 100.0).clamp(0.0, 1.0))
}

/// Similarity judged by a chat model on a 0–100 scale.
#[derive(Debug, Clone)]
pub struct LlmScorer {
    client: Arc<ChatClient>,
    model: String,
}

const RATING_SYSTEM: &str = "Rate the semantic similarity of the two phrases on a scale from 0 to 100. \
Reply with the number only.";

impl LlmScorer {
    fn request(&self, a: &str, b: &str) -> ChatRequest {
        ChatRequest::new(
            self.model.clone(),
            vec![ChatMessage::system(RATING_SYSTEM), ChatMessage::user(format!("Phrase A: {a}\nPhrase B: {b}"))],
        )
    }
}

impl SimilarityScorer for LlmScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64, ClientError> {
        if normalize(a) == normalize(b) {
            return Ok(1.0);
        }
        let request = self.request(a, b);
        for _ in 0..2 {
            let reply = self.client.send(&request)?;
            if let Some(score) = parse_rating(&reply.content) {
                return Ok(score);
            }
        }
        log::warn!("similarity rating for {a:?} / {b:?} was not numeric twice; scoring 0.0");
        Ok(0.0)
    }
}

pub fn llm_similarity_scorer(client: Arc<ChatClient>, model: impl Into<String>) -> LlmScorer {
    LlmScorer { client, model: model.into() }
}
