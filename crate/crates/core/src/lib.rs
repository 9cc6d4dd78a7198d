//! De-identification of free-text clinical notes.
//!
//! The pipeline maps the 18 HIPAA identifiers onto dataset PHI categories,
//! builds a structured redaction prompt from that mapping, runs one or more
//! redaction backends (rule-based, gold oracle, identity control or a remote
//! chat-completions model) and scores their output against gold annotations.

pub mod category;
pub mod corpus;
pub mod evaluation;
pub mod hipaa_map;
pub mod llm_client;
pub mod pools;
pub mod prompting;
pub mod redaction;
pub mod surrogate;
pub mod text;

pub use category::PhiCategory;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
