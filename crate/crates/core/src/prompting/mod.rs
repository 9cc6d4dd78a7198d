//! Redaction prompts: a task statement, a command naming the replacement
//! marker, and one rule per mapped PHI category.

mod lint;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::category::PhiCategory;
use crate::hipaa_map::CategoryMapping;

pub use lint::{lint_prompt, LintCode, LintWarning};

pub const DEFAULT_MARKER: &str = "[redacted]";
pub const TASK_STATEMENT: &str = "Please anonymize the following clinical note.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub instruction: String,
    pub tag: PhiCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
}

impl Rule {
    fn new(instruction: &str, tag: PhiCategory, example: Option<&str>) -> Self {
        Rule { instruction: instruction.to_string(), tag, example: example.map(str::to_string) }
    }

    pub fn render(&self) -> String {
        match &self.example {
            Some(ex) => format!("{}, such as \"{}\"", self.instruction, ex),
            None => self.instruction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_statement: String,
    #[serde(default)]
    pub command: String,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default = "default_marker")]
    pub marker: String,
    #[serde(default)]
    pub implicit: bool,
}

fn default_marker() -> String {
    DEFAULT_MARKER.to_string()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("mapping covers no concrete PHI category")]
    EmptyMapping,
    #[error("invalid marker {0:?}: must be non-empty, single-line and free of double quotes")]
    InvalidMarker(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("template config: {0}")]
    Config(String),
}

#[derive(Serialize, Deserialize)]
struct PromptSection {
    prompt: PromptTemplate,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: &str| Err(PromptError::InvalidTemplate(m.to_string()));
        if self.task_statement.trim().is_empty() {
            return bad("task statement is empty");
        }
        let single_line = std::iter::once(&self.task_statement)
            .chain(std::iter::once(&self.command))
            .chain(self.rules.iter().map(|r| &r.instruction))
            .chain(self.rules.iter().filter_map(|r| r.example.as_ref()))
            .all(|s| !s.contains('\n') && !s.contains('\r'));
        if !single_line {
            return bad("template fields must be single-line");
        }
        if self.rules.iter().any(|r| r.instruction.trim().is_empty()) {
            return bad("rule instruction is empty");
        }
        if !self.implicit {
            if !self.command.contains(&self.marker) {
                return bad("command does not mention the marker");
            }
            if self.rules.is_empty() {
                return bad("explicit prompt has no rules");
            }
        }
        Ok(())
    }

    /// Exact system-message text: task line, command line, then one line per
    /// rule, newline-separated with no trailing whitespace.
    pub fn render(&self) -> String {
        let mut lines = vec![self.task_statement.trim_end().to_string()];
        if !self.command.trim().is_empty() {
            lines.push(self.command.trim_end().to_string());
        }
        lines.extend(self.rules.iter().map(|r| r.render().trim_end().to_string()));
        lines.join("\n")
    }

    /// Serializes as a `[prompt]` TOML section.
    pub fn to_toml(&self) -> Result<String, PromptError> {
        toml::to_string(&PromptSection { prompt: self.clone() }).map_err(|e| PromptError::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self, PromptError> {
        let section: PromptSection = toml::from_str(s).map_err(|e| PromptError::Config(e.to_string()))?;
        section.prompt.validate()?;
        Ok(section.prompt)
    }
}

/// Free-form render of a template, equivalent to `template.render()`.
pub fn render(template: &PromptTemplate) -> String {
    template.render()
}

/// The bare task statement with no command or rules.
pub fn build_implicit_prompt() -> PromptTemplate {
    PromptTemplate {
        task_statement: TASK_STATEMENT.to_string(),
        command: String::new(),
        rules: Vec::new(),
        marker: DEFAULT_MARKER.to_string(),
        implicit: true,
    }
}

pub fn command_for(marker: &str) -> String {
    format!("Replace all the following information with the term \"{marker}\":")
}

/// Rule lines in emission order. DATE and ID share one line.
fn canonical_rules() -> [(&'static [PhiCategory], Rule); 6] {
    use PhiCategory::*;
    [
        (
            &[Name],
            Rule::new(
                "Redact any strings that might be a name or acronym or initials, patients' names, doctors' names, \
                 the names of the M.D. or Dr., pager names, medical staff names",
                Name,
                None,
            ),
        ),
        (
            &[Location],
            Rule::new(
                "Redact any strings that might be a location or address, including clinic and hospital names",
                Location,
                Some("3970 Longview Drive"),
            ),
        ),
        (&[Age], Rule::new("Redact any strings that look like \"something years old\" or \"age 37\"", Age, None)),
        (&[Date, Id], Rule::new("Redact any dates and IDs and numbers and record dates", Date, None)),
        (&[Profession], Rule::new("Redact professions", Profession, Some("manager"))),
        (&[Contact], Rule::new("Redact any contact information", Contact, None)),
    ]
}

fn check_marker(marker: &str) -> Result<(), PromptError> {
    if marker.trim().is_empty() || marker.contains(['\n', '\r', '"']) {
        return Err(PromptError::InvalidMarker(marker.to_string()));
    }
    Ok(())
}

/// One rule per distinct mapped category, in fixed order.
pub fn build_explicit_prompt(mappings: &[CategoryMapping], marker: &str) -> Result<PromptTemplate, PromptError> {
    check_marker(marker)?;
    let mapped: BTreeSet<PhiCategory> = mappings.iter().map(|m| m.category).filter(|c| c.is_concrete()).collect();
    if mapped.is_empty() {
        return Err(PromptError::EmptyMapping);
    }
    let rules = canonical_rules()
        .into_iter()
        .filter_map(|(covers, mut rule)| {
            let tag = covers.iter().copied().find(|c| mapped.contains(c))?;
            rule.tag = tag;
            Some(rule)
        })
        .collect();
    let template = PromptTemplate {
        task_statement: TASK_STATEMENT.to_string(),
        command: command_for(marker),
        rules,
        marker: marker.to_string(),
        implicit: false,
    };
    template.validate()?;
    Ok(template)
}
