//! i2b2-style XML: a `<TEXT>` body plus PHI tags under `<TAGS>` carrying
//! `start`/`end`/`text`/`TYPE` attributes.

use std::sync::LazyLock;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use regex::Regex;

use super::{normalize_spans, AnnotatedSpan, ClinicalDocument, CorpusError, DocumentSource};
use crate::category::PhiCategory;
use crate::text::CharIndex;

static RECORD_DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)record date:\s*(\S+)").expect("static regex"));

struct RawTag {
    name: String,
    start: usize,
    end: usize,
    surface: Option<String>,
    subtype: Option<String>,
}

/// Maps an i2b2 2014 PHI sub-type (the `TYPE` attribute) to its category.
fn category_of_subtype(subtype: &str) -> Option<PhiCategory> {
    let c = match subtype.to_ascii_uppercase().as_str() {
        "PATIENT" | "DOCTOR" | "USERNAME" | "NAME" => PhiCategory::Name,
        "PROFESSION" => PhiCategory::Profession,
        "ROOM" | "DEPARTMENT" | "HOSPITAL" | "ORGANIZATION" | "STREET" | "CITY" | "STATE" | "COUNTRY" | "ZIP"
        | "LOCATION-OTHER" | "LOCATION" => PhiCategory::Location,
        "AGE" => PhiCategory::Age,
        "DATE" => PhiCategory::Date,
        "PHONE" | "FAX" | "EMAIL" | "URL" | "IPADDR" | "CONTACT" => PhiCategory::Contact,
        "SSN" | "MEDICALRECORD" | "HEALTHPLAN" | "ACCOUNT" | "LICENSE" | "VEHICLE" | "DEVICE" | "BIOID" | "IDNUM"
        | "ID" => PhiCategory::Id,
        _ => return None,
    };
    Some(c)
}

fn category_of(tag: &RawTag) -> PhiCategory {
    tag.name
        .parse::<PhiCategory>()
        .ok()
        .or_else(|| tag.subtype.as_deref().and_then(category_of_subtype))
        .unwrap_or(PhiCategory::Others)
}

fn malformed(doc_id: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::MalformedXml { doc_id: doc_id.to_string(), message: message.into() }
}

fn read_tag(doc_id: &str, e: &BytesStart<'_>) -> Result<RawTag, CorpusError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    let mut start = None;
    let mut end = None;
    let mut surface = None;
    let mut subtype = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| malformed(doc_id, err.to_string()))?;
        let value = attr.unescape_value().map_err(|err| malformed(doc_id, err.to_string()))?.into_owned();
        match attr.key.as_ref() {
            b"start" => start = Some(value),
            b"end" => end = Some(value),
            b"text" => surface = Some(value),
            b"TYPE" => subtype = Some(value),
            _ => {}
        }
    }
    let parse = |v: Option<String>, what: &str| -> Result<usize, CorpusError> {
        let v = v.ok_or_else(|| malformed(doc_id, format!("<{name}> lacks `{what}`")))?;
        v.trim().parse().map_err(|_| malformed(doc_id, format!("<{name}> has non-numeric `{what}`: {v:?}")))
    };
    Ok(RawTag { start: parse(start, "start")?, end: parse(end, "end")?, name: name.clone(), surface, subtype })
}

/// Parses one annotated note. Tag offsets are taken as char offsets; when
/// they do not select the declared surface they are retried as UTF-8 byte
/// offsets before failing with `OffsetMismatch`.
pub fn parse_i2b2_xml(raw: &[u8], doc_id: &str) -> Result<(ClinicalDocument, Vec<AnnotatedSpan>), CorpusError> {
    let mut reader = Reader::from_reader(raw);
    let mut buf = Vec::new();
    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut text: Option<String> = None;
    let mut tags = Vec::new();

    let in_text = |stack: &[Vec<u8>]| stack.last().is_some_and(|n| n.as_slice() == b"TEXT");
    let in_tags = |stack: &[Vec<u8>]| stack.last().is_some_and(|n| n.as_slice() == b"TAGS");

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(doc_id, format!("at byte {}: {e}", reader.error_position())))?;
        match event {
            Event::Start(e) => {
                if in_tags(&stack) {
                    tags.push(read_tag(doc_id, &e)?);
                }
                if e.name().as_ref() == b"TEXT" {
                    text.get_or_insert_with(String::new);
                }
                stack.push(e.name().as_ref().to_vec());
            }
            Event::Empty(e) => {
                if in_tags(&stack) {
                    tags.push(read_tag(doc_id, &e)?);
                } else if e.name().as_ref() == b"TEXT" {
                    text.get_or_insert_with(String::new);
                }
            }
            Event::End(_) => {
                stack.pop();
            }
            Event::Text(e) if in_text(&stack) => {
                let s = e.decode().map_err(|err| malformed(doc_id, err.to_string()))?;
                text.get_or_insert_with(String::new).push_str(&s);
            }
            Event::CData(e) if in_text(&stack) => {
                let s = e.decode().map_err(|err| malformed(doc_id, err.to_string()))?;
                text.get_or_insert_with(String::new).push_str(&s);
            }
            Event::GeneralRef(e) if in_text(&stack) => {
                let resolved = if e.is_char_ref() {
                    e.resolve_char_ref().map_err(|err| malformed(doc_id, err.to_string()))?.map(String::from)
                } else {
                    let name = e.decode().map_err(|err| malformed(doc_id, err.to_string()))?;
                    quick_xml::escape::resolve_predefined_entity(&name).map(str::to_string)
                };
                let resolved = resolved.ok_or_else(|| malformed(doc_id, "unresolvable entity reference"))?;
                text.get_or_insert_with(String::new).push_str(&resolved);
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !stack.is_empty() {
        return Err(malformed(doc_id, "unexpected end of input inside an element"));
    }
    let text = text.ok_or_else(|| malformed(doc_id, "missing <TEXT> element"))?;
    if text.is_empty() {
        return Err(CorpusError::InvalidDocument { doc_id: doc_id.into(), message: "empty text".into() });
    }
    if doc_id.is_empty() {
        return Err(CorpusError::InvalidDocument { doc_id: String::new(), message: "empty doc_id".into() });
    }

    let idx = CharIndex::new(&text);
    let mut spans = Vec::with_capacity(tags.len());
    for tag in &tags {
        let (start, end) = resolve_offsets(doc_id, &text, &idx, tag)?;
        let surface = idx.slice(&text, start, end).unwrap_or_default().to_string();
        spans.push(AnnotatedSpan { start, end, category: category_of(tag), surface });
    }
    let spans = normalize_spans(&text, spans);
    let record_date = RECORD_DATE.captures(&text).map(|c| c[1].to_string());
    let doc = ClinicalDocument { doc_id: doc_id.to_string(), text, record_date, source: DocumentSource::I2b2Xml };
    Ok((doc, spans))
}

fn resolve_offsets(doc_id: &str, text: &str, idx: &CharIndex, tag: &RawTag) -> Result<(usize, usize), CorpusError> {
    let by_char = (tag.start < tag.end).then(|| idx.slice(text, tag.start, tag.end)).flatten();
    let Some(expected) = tag.surface.as_deref() else {
        return match by_char {
            Some(_) => Ok((tag.start, tag.end)),
            None => Err(CorpusError::OffsetMismatch {
                doc_id: doc_id.into(),
                tag: tag.name.clone(),
                start: tag.start,
                end: tag.end,
                expected: String::new(),
                found: "<out of range>".into(),
            }),
        };
    };
    if by_char == Some(expected) {
        return Ok((tag.start, tag.end));
    }
    if let (Some(s), Some(e)) = (idx.char_of_byte(tag.start), idx.char_of_byte(tag.end)) {
        if s < e && idx.slice(text, s, e) == Some(expected) {
            return Ok((s, e));
        }
    }
    Err(CorpusError::OffsetMismatch {
        doc_id: doc_id.into(),
        tag: tag.name.clone(),
        start: tag.start,
        end: tag.end,
        expected: expected.to_string(),
        found: by_char.map(str::to_string).unwrap_or_else(|| "<out of range>".into()),
    })
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

/// Serializes a document back to the i2b2 schema with char offsets.
pub fn write_i2b2_xml(doc: &ClinicalDocument, spans: &[AnnotatedSpan]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<deIdi2b2>\n<TEXT><![CDATA[");
    out.push_str(&doc.text.replace("]]>", "]]]]><![CDATA[>"));
    out.push_str("]]></TEXT>\n<TAGS>\n");
    for (i, s) in spans.iter().enumerate() {
        out.push_str(&format!(
            "<{cat} id=\"P{i}\" start=\"{}\" end=\"{}\" text=\"{}\" TYPE=\"{cat}\" comment=\"\" />\n",
            s.start,
            s.end,
            escape_attr(&s.surface),
            cat = s.category.as_str(),
        ));
    }
    out.push_str("</TAGS>\n</deIdi2b2>\n");
    out
}
