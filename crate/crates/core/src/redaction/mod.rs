//! Redaction backends: gold-oracle mock, identity control, rule-based and
//! remote chat model.

mod rules;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSpan, ClinicalDocument};
use crate::llm_client::{build_request, ChatClient, ChatMessage, ClientError};
use crate::prompting::PromptTemplate;
use crate::text::CharIndex;

pub use rules::{rule_redact, Pattern, RuleSet, APPLICATION_ORDER};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RedactionError {
    #[error("spans {first} and {second} overlap")]
    OverlappingSpans { first: usize, second: usize },
    #[error("span {index} [{start}, {end}) is outside text of length {len}")]
    SpanOutOfRange { index: usize, start: usize, end: usize, len: usize },
    #[error("model returned an empty completion for {doc_id}")]
    EmptyCompletion { doc_id: String },
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error("rule file line {line}: {message}")]
    Rules { line: usize, message: String },
}

/// Replaces every span's characters with `marker`. Characters outside the
/// spans are copied unchanged.
pub fn apply_redaction(text: &str, spans: &[AnnotatedSpan], marker: &str) -> Result<String, RedactionError> {
    let idx = CharIndex::new(text);
    let len = idx.char_len();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end));
    for &i in &order {
        let s = &spans[i];
        if s.start >= s.end || s.end > len {
            return Err(RedactionError::SpanOutOfRange { index: i, start: s.start, end: s.end, len });
        }
    }
    for w in order.windows(2) {
        if spans[w[0]].end > spans[w[1]].start {
            return Err(RedactionError::OverlappingSpans { first: w[0].min(w[1]), second: w[0].max(w[1]) });
        }
    }
    let mut out = text.to_string();
    for &i in order.iter().rev() {
        let s = &spans[i];
        let (b0, b1) = (idx.byte_of(s.start).expect("checked"), idx.byte_of(s.end).expect("checked"));
        out.replace_range(b0..b1, marker);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportMeta {
    pub model: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// HTTP attempts summed over all passes.
    pub attempts: u32,
    pub passes: u32,
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactionResult {
    pub doc_id: String,
    pub redacted_text: String,
    pub backend_id: String,
    #[serde(with = "millis")]
    pub elapsed: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_meta: Option<TransportMeta>,
    /// Spans the backend itself replaced, when it knows them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<AnnotatedSpan>>,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

fn local_result(
    doc: &ClinicalDocument,
    backend_id: &str,
    started: Instant,
    redacted_text: String,
    spans: Option<Vec<AnnotatedSpan>>,
) -> RedactionResult {
    RedactionResult {
        doc_id: doc.doc_id.clone(),
        redacted_text,
        backend_id: backend_id.to_string(),
        elapsed: started.elapsed(),
        transport_meta: None,
        spans,
    }
}

/// Perfect oracle: replaces exactly the gold spans.
pub fn mock_redact(
    doc: &ClinicalDocument,
    gold: &[AnnotatedSpan],
    marker: &str,
) -> Result<RedactionResult, RedactionError> {
    let started = Instant::now();
    let text = apply_redaction(&doc.text, gold, marker)?;
    Ok(local_result(doc, "mock", started, text, Some(gold.to_vec())))
}

/// Negative control: returns the input unchanged.
pub fn identity_redact(doc: &ClinicalDocument) -> RedactionResult {
    local_result(doc, "identity", Instant::now(), doc.text.clone(), Some(Vec::new()))
}

/// Sends the rendered template as the system message and the note as the
/// user message. With `passes > 1` each further pass re-sends the previous
/// reply as the user message under the same system prompt. The final reply
/// is stored verbatim.
pub fn llm_redact(
    doc: &ClinicalDocument,
    template: &PromptTemplate,
    client: &ChatClient,
    model: &str,
    temperature: Option<f64>,
    passes: u32,
) -> Result<RedactionResult, RedactionError> {
    let started = Instant::now();
    let mut request = build_request(template, &doc.text, model, temperature)?;
    let mut meta = TransportMeta {
        model: model.to_string(),
        prompt_tokens: None,
        completion_tokens: None,
        attempts: 0,
        passes: 0,
        finish_reason: String::new(),
    };
    let mut text = String::new();
    for pass in 0..passes.max(1) {
        if pass > 0 {
            request.messages[1] = ChatMessage::user(text.clone());
        }
        let resp = client.send(&request)?;
        meta.attempts += resp.attempts;
        meta.passes += 1;
        meta.finish_reason = resp.finish_reason;
        if let Some(u) = resp.usage {
            meta.prompt_tokens = Some(meta.prompt_tokens.unwrap_or(0) + u.prompt_tokens);
            meta.completion_tokens = Some(meta.completion_tokens.unwrap_or(0) + u.completion_tokens);
        }
        if resp.content.is_empty() {
            return Err(RedactionError::EmptyCompletion { doc_id: doc.doc_id.clone() });
        }
        text = resp.content;
    }
    Ok(RedactionResult {
        doc_id: doc.doc_id.clone(),
        redacted_text: text,
        backend_id: "llm".to_string(),
        elapsed: started.elapsed(),
        transport_meta: Some(meta),
        spans: None,
    })
}

/// A redaction backend. Implementations never mutate their inputs and are
/// safe to call from several threads at once.
pub trait RedactionBackend: Send + Sync {
    fn id(&self) -> &str;

    /// `gold` is only consulted by the oracle backend.
    fn redact(
        &self,
        doc: &ClinicalDocument,
        gold: &[AnnotatedSpan],
        prompt: &PromptTemplate,
    ) -> Result<RedactionResult, RedactionError>;

    /// Whether the backend talks to a remote service.
    fn is_remote(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl RedactionBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn redact(
        &self,
        doc: &ClinicalDocument,
        gold: &[AnnotatedSpan],
        prompt: &PromptTemplate,
    ) -> Result<RedactionResult, RedactionError> {
        mock_redact(doc, gold, &prompt.marker)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

impl RedactionBackend for IdentityBackend {
    fn id(&self) -> &str {
        "identity"
    }

    fn redact(
        &self,
        doc: &ClinicalDocument,
        _: &[AnnotatedSpan],
        _: &PromptTemplate,
    ) -> Result<RedactionResult, RedactionError> {
        Ok(identity_redact(doc))
    }
}

#[derive(Debug, Clone)]
pub struct RuleBackend {
    rules: Arc<RuleSet>,
}

impl RuleBackend {
    pub fn new(rules: RuleSet) -> Self {
        RuleBackend { rules: Arc::new(rules) }
    }
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self::new(RuleSet::default_rules())
    }
}

impl RedactionBackend for RuleBackend {
    fn id(&self) -> &str {
        "rule"
    }

    fn redact(
        &self,
        doc: &ClinicalDocument,
        _: &[AnnotatedSpan],
        prompt: &PromptTemplate,
    ) -> Result<RedactionResult, RedactionError> {
        let started = Instant::now();
        let (text, spans) = rule_redact(&doc.text, &self.rules, &prompt.marker);
        Ok(local_result(doc, self.id(), started, text, Some(spans)))
    }
}

#[derive(Debug, Clone)]
pub struct LlmBackend {
    pub client: Arc<ChatClient>,
    pub model: String,
    pub temperature: Option<f64>,
    /// Number of prompting passes per document (at least 1).
    pub passes: u32,
}

impl LlmBackend {
    pub fn new(client: Arc<ChatClient>, model: impl Into<String>) -> Self {
        LlmBackend { client, model: model.into(), temperature: None, passes: 1 }
    }
}

impl RedactionBackend for LlmBackend {
    fn id(&self) -> &str {
        "llm"
    }

    fn redact(
        &self,
        doc: &ClinicalDocument,
        _: &[AnnotatedSpan],
        prompt: &PromptTemplate,
    ) -> Result<RedactionResult, RedactionError> {
        llm_redact(doc, prompt, &self.client, &self.model, self.temperature, self.passes)
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::PhiCategory;
    use crate::corpus::DocumentSource;
    use proptest::prelude::*;

    fn span(text: &str, start: usize, end: usize) -> AnnotatedSpan {
        let surface: String = text.chars().skip(start).take(end - start).collect();
        AnnotatedSpan { start, end, category: PhiCategory::Name, surface }
    }

    fn doc(text: &str) -> ClinicalDocument {
        ClinicalDocument { doc_id: "d".into(), text: text.into(), record_date: None, source: DocumentSource::Synthetic }
    }

    #[test]
    fn direct_substitution() {
        let t = "Dr. Adams saw the patient";
        assert_eq!(apply_redaction(t, &[span(t, 4, 9)], "[redacted]").unwrap(), "Dr. [redacted] saw the patient");
        assert_eq!(apply_redaction(t, &[], "[redacted]").unwrap(), t);
    }

    #[test]
    fn two_spans_one_line_any_input_order() {
        let t = "Adams met Baker";
        let out = apply_redaction(t, &[span(t, 10, 15), span(t, 0, 5)], "X").unwrap();
        assert_eq!(out, "X met X");
    }

    #[test]
    fn non_ascii_offsets_are_chars() {
        let t = "Zoë Ångström née Brontë";
        assert_eq!(apply_redaction(t, &[span(t, 4, 12)], "[r]").unwrap(), "Zoë [r] née Brontë");
    }

    #[test]
    fn rejects_bad_spans() {
        let t = "abcdef";
        assert_eq!(
            apply_redaction(t, &[span(t, 0, 3), span(t, 2, 4)], "x"),
            Err(RedactionError::OverlappingSpans { first: 0, second: 1 })
        );
        let mut far = span(t, 0, 1);
        far.end = 9;
        assert!(matches!(apply_redaction(t, &[far], "x"), Err(RedactionError::SpanOutOfRange { index: 0, .. })));
    }

    #[test]
    fn mock_and_identity() {
        let d = doc("Seen by Adams and Baker.");
        let gold = vec![span(&d.text, 8, 13), span(&d.text, 18, 23)];
        let r = mock_redact(&d, &gold, "[redacted]").unwrap();
        assert_eq!(r.redacted_text.matches("[redacted]").count(), 2);
        assert_eq!(mock_redact(&d, &[], "[redacted]").unwrap().redacted_text, d.text);
        assert_eq!(identity_redact(&d).redacted_text, d.text);
    }

    fn text_and_spans() -> impl Strategy<Value = (String, Vec<AnnotatedSpan>)> {
        "[a-zA-Z0-9 .,éß\n-]{1,80}"
            .prop_flat_map(|text| {
                let n = text.chars().count();
                (Just(text), proptest::collection::vec((0..n, 1..6usize), 0..6))
            })
            .prop_map(|(text, raw)| {
                let n = text.chars().count();
                let mut spans: Vec<AnnotatedSpan> = Vec::new();
                let mut sorted = raw;
                sorted.sort();
                for (s, l) in sorted {
                    let e = (s + l).min(n);
                    if s < e && spans.last().is_none_or(|p| p.end <= s) {
                        spans.push(span(&text, s, e));
                    }
                }
                (text, spans)
            })
    }

    proptest! {
        #[test]
        fn length_and_split_invariants((text, spans) in text_and_spans(), marker in "\\[[A-Z]{1,6}\\]") {
            let out = apply_redaction(&text, &spans, &marker).unwrap();
            let removed: usize = spans.iter().map(|s| s.len()).sum();
            prop_assert_eq!(
                out.chars().count(),
                text.chars().count() - removed + spans.len() * marker.chars().count()
            );
            let mut expected = Vec::new();
            let mut prev = 0;
            for s in &spans {
                expected.push(text.chars().skip(prev).take(s.start - prev).collect::<String>());
                prev = s.end;
            }
            expected.push(text.chars().skip(prev).collect::<String>());
            let got: Vec<String> = out.split(marker.as_str()).map(str::to_string).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
