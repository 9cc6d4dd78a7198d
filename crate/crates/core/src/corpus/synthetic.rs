//! Licensing-free synthetic notes with exact gold spans.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSpan, ClinicalDocument, CorpusEntry, CorpusError, DocumentSource};
use crate::category::PhiCategory;
use crate::pools;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub per_category_counts: BTreeMap<PhiCategory, usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `count` entities of every concrete category per document.
    pub fn uniform(n_docs: usize, count: usize, seed: u64) -> Self {
        let per_category_counts = PhiCategory::CONCRETE.iter().map(|&c| (c, count)).collect();
        Self { n_docs, per_category_counts, seed }
    }

    pub fn entities_per_doc(&self) -> usize {
        self.per_category_counts.values().sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n_docs == 0 {
            return Err(CorpusError::InvalidSpec("n_docs must be positive".into()));
        }
        if self.per_category_counts.get(&PhiCategory::Others).copied().unwrap_or(0) > 0 {
            return Err(CorpusError::InvalidSpec("OTHERS has no surrogate pool".into()));
        }
        if self.entities_per_doc() == 0 {
            return Err(CorpusError::InvalidSpec("at least one category count must be positive".into()));
        }
        Ok(())
    }
}

fn entity_templates(category: PhiCategory) -> &'static [&'static str] {
    match category {
        PhiCategory::Name => &[
            "The patient was seen by Dr. {}.",
            "{} presented to the clinic with fatigue.",
            "Case discussed with {} from the care team.",
            "Nursing note signed by {}.",
        ],
        PhiCategory::Profession => {
            &["The patient's occupation is {}.", "Worked for several years in the role of {}.", "Occupation: {}."]
        }
        PhiCategory::Location => {
            &["The patient lives at {}.", "Transferred from {} for further care.", "Follow-up arranged at {}."]
        }
        PhiCategory::Age => &[
            "The patient is {} and reports mild chest discomfort.",
            "Patient reports being {} at the time of diagnosis.",
        ],
        PhiCategory::Date => {
            &["Seen in clinic on {}.", "Last colonoscopy was performed on {}.", "Labs drawn {} were unremarkable."]
        }
        PhiCategory::Contact => &["The patient can be reached at {}.", "Contact: {}.", "Results were forwarded to {}."],
        PhiCategory::Id => &["Medical record number {}.", "MRN: {}.", "Insurance member ID {} verified."],
        PhiCategory::Others => &[],
    }
}

const FILLER: &[&str] = &[
    "Blood pressure was 128/76 mmHg.",
    "Heart rate 72 bpm, regular.",
    "Continue metformin 500 mg twice daily.",
    "Hemoglobin A1c improved to 7.1%.",
    "No acute distress.",
    "Lungs clear to auscultation bilaterally.",
    "Denies fever, chills, or night sweats.",
    "Diabetic foot exam without ulceration.",
];

enum Piece {
    Plain(&'static str),
    Entity { template: &'static str, category: PhiCategory, value: String },
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> CorpusEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let mut pieces = Vec::new();
    for (&category, &count) in &spec.per_category_counts {
        for _ in 0..count {
            let template = entity_templates(category).choose(&mut rng).copied().expect("non-empty templates");
            pieces.push(Piece::Entity { template, category, value: pools::draw(category, &mut rng) });
        }
    }
    for _ in 0..rng.random_range(2..5) {
        pieces.push(Piece::Plain(FILLER.choose(&mut rng).copied().expect("non-empty filler")));
    }
    pieces.shuffle(&mut rng);

    let mut text = String::new();
    let mut len_chars = 0usize;
    let mut spans = Vec::new();
    let push = |text: &mut String, s: &str, len_chars: &mut usize| {
        text.push_str(s);
        *len_chars += s.chars().count();
    };
    push(&mut text, "CLINIC NOTE\n", &mut len_chars);
    for (i, piece) in pieces.iter().enumerate() {
        if i > 0 {
            let sep = if rng.random_bool(0.25) { "\n" } else { " " };
            push(&mut text, sep, &mut len_chars);
        }
        match piece {
            Piece::Plain(s) => push(&mut text, s, &mut len_chars),
            Piece::Entity { template, category, value } => {
                let (before, after) = template.split_once("{}").expect("template has a slot");
                push(&mut text, before, &mut len_chars);
                let start = len_chars;
                push(&mut text, value, &mut len_chars);
                spans.push(AnnotatedSpan { start, end: len_chars, category: *category, surface: value.clone() });
                push(&mut text, after, &mut len_chars);
            }
        }
    }
    text.push('\n');

    let record_date = spans.iter().find(|s| s.category == PhiCategory::Date).map(|s| s.surface.clone());
    CorpusEntry {
        doc: ClinicalDocument {
            doc_id: format!("synth-{}-{:05}", spec.seed, index),
            text,
            record_date,
            source: DocumentSource::Synthetic,
        },
        spans,
    }
}

/// Deterministic for a fixed spec: every document embeds exactly the
/// requested number of entities per category.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<CorpusEntry>, CorpusError> {
    spec.validate()?;
    Ok((0..spec.n_docs).map(|i| generate_one(spec, i)).collect())
}
