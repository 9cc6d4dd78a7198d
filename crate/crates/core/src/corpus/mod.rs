//! Clinical documents, gold PHI spans and the line-delimited JSON corpus
//! manifest every other stage consumes.

mod synthetic;
mod xml;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::PhiCategory;
use crate::text::CharIndex;

pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use xml::{parse_i2b2_xml, write_i2b2_xml};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocumentSource {
    I2b2Xml,
    Synthetic,
}

/// One free-text clinical note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_date: Option<String>,
    pub source: DocumentSource,
}

/// A gold PHI occurrence. `start..end` are char offsets into the document text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedSpan {
    pub start: usize,
    pub end: usize,
    pub category: PhiCategory,
    pub surface: String,
}

impl AnnotatedSpan {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &AnnotatedSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A document with its gold spans; one line of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    #[serde(flatten)]
    pub doc: ClinicalDocument,
    pub spans: Vec<AnnotatedSpan>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed XML in `{doc_id}`: {message}")]
    MalformedXml { doc_id: String, message: String },
    #[error("`{doc_id}`: <{tag}> at [{start},{end}) expected {expected:?} but text has {found:?}")]
    OffsetMismatch { doc_id: String, tag: String, start: usize, end: usize, expected: String, found: String },
    #[error("invalid document `{doc_id}`: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no parseable documents in {} ({skipped} skipped)", dir.display())]
    EmptyCorpus { dir: PathBuf, skipped: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    EmptyDocId,
    EmptyText,
    EmptyOrInverted,
    OutOfRange,
    SurfaceMismatch,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `None` for document-level violations.
    pub span_index: Option<usize>,
    /// The second span of an `Overlap` pair.
    pub other_index: Option<usize>,
    pub kind: ViolationKind,
}

impl Violation {
    fn span(i: usize, kind: ViolationKind) -> Self {
        Violation { span_index: Some(i), other_index: None, kind }
    }
}

/// Checks every span invariant; an empty result means the pair is valid.
pub fn validate_annotations(doc: &ClinicalDocument, spans: &[AnnotatedSpan]) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.doc_id.is_empty() {
        out.push(Violation { span_index: None, other_index: None, kind: ViolationKind::EmptyDocId });
    }
    if doc.text.is_empty() {
        out.push(Violation { span_index: None, other_index: None, kind: ViolationKind::EmptyText });
    }
    let idx = CharIndex::new(&doc.text);
    let mut well_formed = vec![false; spans.len()];
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end {
            out.push(Violation::span(i, ViolationKind::EmptyOrInverted));
        } else if s.end > idx.char_len() {
            out.push(Violation::span(i, ViolationKind::OutOfRange));
        } else if idx.slice(&doc.text, s.start, s.end) != Some(s.surface.as_str()) {
            out.push(Violation::span(i, ViolationKind::SurfaceMismatch));
            well_formed[i] = true;
        } else {
            well_formed[i] = true;
        }
    }
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            if well_formed[i] && well_formed[j] && spans[i].overlaps(&spans[j]) {
                out.push(Violation { span_index: Some(i), other_index: Some(j), kind: ViolationKind::Overlap });
            }
        }
    }
    out
}

/// Sorts spans and merges overlapping ones into the outer span, which keeps
/// its category. Surfaces are re-read from `text`.
pub fn normalize_spans(text: &str, mut spans: Vec<AnnotatedSpan>) -> Vec<AnnotatedSpan> {
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let idx = CharIndex::new(text);
    let mut merged: Vec<AnnotatedSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.start < last.end => {
                if s.end > last.end {
                    last.end = s.end;
                    last.surface = idx.slice(text, last.start, last.end).unwrap_or_default().to_string();
                }
            }
            _ => merged.push(s),
        }
    }
    merged
}

/// Result of loading a directory of XML files.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub entries: Vec<CorpusEntry>,
    pub skipped: Vec<(PathBuf, CorpusError)>,
}

impl LoadedCorpus {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Parses every `*.xml` file in `dir`, in filename order. Unparseable files
/// are logged and skipped.
pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let parsed: Vec<(PathBuf, Result<CorpusEntry, CorpusError>)> = paths
        .into_par_iter()
        .map(|path| {
            let res = fs::read(&path).map_err(|e| CorpusError::io(&path, e)).and_then(|raw| {
                let doc_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                parse_i2b2_xml(&raw, &doc_id).map(|(doc, spans)| CorpusEntry { doc, spans })
            });
            (path, res)
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (path, res) in parsed {
        match res {
            Ok(entry) => entries.push(entry),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e));
            }
        }
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyCorpus { dir: dir.to_path_buf(), skipped: skipped.len() });
    }
    if !skipped.is_empty() {
        log::warn!("{} file(s) skipped while loading {}", skipped.len(), dir.display());
    }
    Ok(LoadedCorpus { entries, skipped })
}

/// Serializes entries as line-delimited JSON.
pub fn write_manifest<W: Write>(mut w: W, entries: &[CorpusEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn manifest_to_string(entries: &[CorpusEntry]) -> String {
    let mut buf = Vec::new();
    write_manifest(&mut buf, entries).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Reads a manifest, rejecting duplicate ids and invalid spans.
pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Manifest { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry =
            serde_json::from_str(&line).map_err(|e| CorpusError::Manifest { line: line_no, message: e.to_string() })?;
        if !seen.insert(entry.doc.doc_id.clone()) {
            return Err(CorpusError::Manifest {
                line: line_no,
                message: format!("duplicate doc_id `{}`", entry.doc.doc_id),
            });
        }
        let violations = validate_annotations(&entry.doc, &entry.spans);
        if !violations.is_empty() {
            return Err(CorpusError::Manifest {
                line: line_no,
                message: format!("{} annotation violation(s), first: {:?}", violations.len(), violations[0]),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let f = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_manifest(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> ClinicalDocument {
        ClinicalDocument {
            doc_id: "d1".into(),
            text: text.into(),
            record_date: None,
            source: DocumentSource::Synthetic,
        }
    }

    fn span(start: usize, end: usize, category: PhiCategory, surface: &str) -> AnnotatedSpan {
        AnnotatedSpan { start, end, category, surface: surface.into() }
    }

    #[test]
    fn valid_spans_have_no_violations() {
        let d = doc("Mr. Joshua Howard visited");
        let spans = vec![span(4, 17, PhiCategory::Name, "Joshua Howard")];
        assert!(validate_annotations(&d, &spans).is_empty());
    }

    #[test]
    fn end_past_text_is_out_of_range() {
        let d = doc("short");
        let v = validate_annotations(&d, &[span(2, 9, PhiCategory::Id, "ort....")]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::OutOfRange);
        assert_eq!(v[0].span_index, Some(0));
    }

    #[test]
    fn overlap_names_both_indices() {
        let d = doc("Joshua Howard");
        let v = validate_annotations(
            &d,
            &[span(0, 6, PhiCategory::Name, "Joshua"), span(3, 13, PhiCategory::Name, "hua Howard")],
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Overlap);
        assert_eq!((v[0].span_index, v[0].other_index), (Some(0), Some(1)));
    }

    #[test]
    fn surface_mismatch_and_inverted() {
        let d = doc("abc def");
        let v = validate_annotations(&d, &[span(0, 3, PhiCategory::Name, "abd"), span(5, 5, PhiCategory::Name, "")]);
        let kinds: Vec<_> = v.iter().map(|x| x.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::SurfaceMismatch, ViolationKind::EmptyOrInverted]);
    }

    #[test]
    fn normalize_merges_into_outer_span() {
        let text = "Seen at Pemberton Memorial Hospital today";
        let spans = vec![
            span(8, 17, PhiCategory::Name, "Pemberton"),
            span(8, 35, PhiCategory::Location, "Pemberton Memorial Hospital"),
        ];
        let merged = normalize_spans(text, spans);
        assert_eq!(merged, vec![span(8, 35, PhiCategory::Location, "Pemberton Memorial Hospital")]);
    }

    #[test]
    fn normalize_merges_partial_overlap_to_union() {
        let text = "0123456789";
        let merged =
            normalize_spans(text, vec![span(5, 9, PhiCategory::Id, "5678"), span(2, 6, PhiCategory::Date, "2345")]);
        assert_eq!(merged, vec![span(2, 9, PhiCategory::Date, "2345678")]);
    }

    #[test]
    fn manifest_roundtrip_and_duplicate_rejection() {
        let e = CorpusEntry {
            doc: doc("Mr. Joshua Howard visited"),
            spans: vec![span(4, 17, PhiCategory::Name, "Joshua Howard")],
        };
        let s = manifest_to_string(std::slice::from_ref(&e));
        assert!(s.starts_with("{\"doc_id\":\"d1\",\"text\":"));
        let back = read_manifest(s.as_bytes()).unwrap();
        assert_eq!(back, vec![e.clone()]);

        let dup = format!("{s}{s}");
        assert!(matches!(read_manifest(dup.as_bytes()), Err(CorpusError::Manifest { line: 2, .. })));
    }
}
