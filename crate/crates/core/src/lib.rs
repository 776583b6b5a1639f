//! Multilingual ICD-10 entity linking.
//!
//! Links clinical term mentions in discharge summaries to ICD-10 codes in
//! two stages: an exact match against a language-specific dictionary of
//! unambiguous terms, then an LLM prompted over the whole document with the
//! mentions marked inline. Results are combined with dictionary precedence
//! and scored with micro precision/recall/F1 at category or subcategory
//! granularity.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod dictionary;
pub mod eval;
pub mod llm_link;
pub mod ontology;
pub mod pipeline;

pub use ontology::{CodeLevel, Icd10Code, MalformedCode};
