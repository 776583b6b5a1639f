//! Language-specific unambiguous term → code dictionaries.
//!
//! A dictionary is built from TSV sources (`term<TAB>code` per line) such
//! as ICD-10 specification files and train-set term lists. Ambiguity is
//! judged after truncating every code to the dictionary's level: a term
//! whose truncated codes collapse to a single code becomes an entry,
//! anything else is excluded as ambiguous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::ontology::{parse_code, truncate, CodeLevel, Icd10Code, MalformedCode};

/// Provenance kind of a dictionary source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Official ICD-10 specification terms.
    Specification,
    /// Term/code pairs taken from a labeled train set.
    TrainSet,
    /// A previously compiled dictionary file.
    Compiled,
}

/// One TSV input file for dictionary construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySource {
    pub path: PathBuf,
    pub kind: SourceKind,
    /// BCP-47-ish language tag, e.g. "es" or "el".
    pub language: String,
}

/// Counters describing a dictionary build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryStats {
    /// Non-comment, non-blank lines read across all sources.
    pub raw_pair_count: usize,
    /// Distinct normalized terms seen.
    pub distinct_term_count: usize,
    /// Terms mapping to exactly one truncated code.
    pub unambiguous_count: usize,
    /// Terms excluded for mapping to two or more truncated codes.
    pub ambiguous_count: usize,
}

/// Immutable term → code map at a fixed level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    language: String,
    level: CodeLevel,
    entries: BTreeMap<String, Icd10Code>,
    ambiguous_terms: BTreeSet<String>,
    stats: DictionaryStats,
    sources: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("cannot read {path}: {source}")]
    SourceIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed line, expected term<TAB>code")]
    MalformedLine { path: PathBuf, line: usize },
    #[error("{path}:{line}: {source}")]
    Code {
        path: PathBuf,
        line: usize,
        #[source]
        source: MalformedCode,
    },
    #[error("sources mix languages {0:?} and {1:?}")]
    MixedLanguages(String, String),
    #[error("{path}:{line}: bad compiled-dictionary header: {reason}")]
    BadHeader {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Normalizes a term surface for dictionary keys and lookups.
///
/// Applies, in order: Unicode canonical composition (NFC), case folding,
/// collapsing of whitespace runs to a single space, and stripping of
/// leading/trailing punctuation (asterisk markers included). Diacritics
/// are preserved; Greek final sigma folds to the medial form so both
/// spellings share one key.
pub fn normalize_term(surface: &str) -> String {
    let composed: String = surface.nfc().collect();
    let folded = composed.to_lowercase().replace('ς', "σ");
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c == ' ' || is_strip_punct(c))
        .to_string()
}

fn is_strip_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¿' | '¡' | '«' | '»' | '…' | '·' | '–' | '—' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}'
        )
}

/// Builds a dictionary from `sources`, judging ambiguity at `level`.
pub fn build_dictionary(
    sources: &[DictionarySource],
    level: CodeLevel,
) -> Result<(Dictionary, DictionaryStats), DictionaryError> {
    let mut language = String::new();
    for source in sources {
        if language.is_empty() {
            language = source.language.clone();
        } else if language != source.language {
            return Err(DictionaryError::MixedLanguages(language, source.language.clone()));
        }
    }

    let mut raw_pair_count = 0usize;
    let mut codes_by_term: BTreeMap<String, BTreeSet<Icd10Code>> = BTreeMap::new();

    for source in sources {
        let content = fs::read_to_string(&source.path).map_err(|e| DictionaryError::SourceIo {
            path: source.path.clone(),
            source: e,
        })?;
        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (term_raw, code_raw) = match (fields.next(), fields.next(), fields.next()) {
                (Some(t), Some(c), None) => (t, c),
                _ => {
                    return Err(DictionaryError::MalformedLine {
                        path: source.path.clone(),
                        line: line_no,
                    })
                }
            };
            let code = parse_code(code_raw).map_err(|e| DictionaryError::Code {
                path: source.path.clone(),
                line: line_no,
                source: e,
            })?;
            raw_pair_count += 1;
            let term = normalize_term(term_raw);
            codes_by_term.entry(term).or_default().insert(truncate(&code, level));
        }
    }

    let mut entries = BTreeMap::new();
    let mut ambiguous_terms = BTreeSet::new();
    for (term, codes) in codes_by_term {
        if codes.len() == 1 {
            entries.insert(term, codes.into_iter().next().unwrap());
        } else {
            ambiguous_terms.insert(term);
        }
    }

    let stats = DictionaryStats {
        raw_pair_count,
        distinct_term_count: entries.len() + ambiguous_terms.len(),
        unambiguous_count: entries.len(),
        ambiguous_count: ambiguous_terms.len(),
    };

    let dictionary = Dictionary {
        language,
        level,
        entries,
        ambiguous_terms,
        stats,
        sources: sources.iter().map(|s| s.path.display().to_string()).collect(),
    };
    Ok((dictionary, stats))
}

impl Dictionary {
    /// Looks up a mention surface; `None` for unknown or ambiguous terms.
    pub fn lookup(&self, surface: &str) -> Option<&Icd10Code> {
        self.entries.get(&normalize_term(surface))
    }

    pub fn stats(&self) -> DictionaryStats {
        self.stats
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn level(&self) -> CodeLevel {
        self.level
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Icd10Code)> {
        self.entries.iter().map(|(t, c)| (t.as_str(), c))
    }

    pub fn is_ambiguous(&self, surface: &str) -> bool {
        self.ambiguous_terms.contains(&normalize_term(surface))
    }

    pub fn ambiguous_terms(&self) -> impl Iterator<Item = &str> {
        self.ambiguous_terms.iter().map(String::as_str)
    }

    /// Writes the compiled form: a `#`-prefixed header followed by sorted
    /// `term<TAB>code` lines. The file is itself a valid dictionary source.
    pub fn save(&self, path: &Path) -> Result<(), DictionaryError> {
        let mut out = String::new();
        out.push_str("# icd10-dict v1\n");
        out.push_str(&format!("# language: {}\n", self.language));
        out.push_str(&format!("# level: {}\n", self.level));
        out.push_str(&format!(
            "# stats: raw={} distinct={} unambiguous={} ambiguous={}\n",
            self.stats.raw_pair_count,
            self.stats.distinct_term_count,
            self.stats.unambiguous_count,
            self.stats.ambiguous_count
        ));
        for source in &self.sources {
            out.push_str(&format!("# source: {source}\n"));
        }
        for term in &self.ambiguous_terms {
            out.push_str(&format!("# ambiguous-term: {term}\n"));
        }
        for (term, code) in &self.entries {
            out.push_str(&format!("{term}\t{code}\n"));
        }
        fs::write(path, out).map_err(|e| DictionaryError::SourceIo {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Reloads a dictionary written by [`Dictionary::save`].
    pub fn load(path: &Path) -> Result<Dictionary, DictionaryError> {
        let content = fs::read_to_string(path).map_err(|e| DictionaryError::SourceIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        let bad_header = |line: usize, reason: &str| DictionaryError::BadHeader {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };

        let mut language = String::new();
        let mut level = None;
        let mut stats = DictionaryStats::default();
        let mut sources = Vec::new();
        let mut ambiguous_terms = BTreeSet::new();
        let mut entries = BTreeMap::new();

        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim_start_matches([' ', '!']);
                if let Some(value) = comment.strip_prefix("language:") {
                    language = value.trim().to_string();
                } else if let Some(value) = comment.strip_prefix("level:") {
                    level = Some(
                        CodeLevel::from_str(value.trim())
                            .map_err(|e| bad_header(line_no, &e.to_string()))?,
                    );
                } else if let Some(value) = comment.strip_prefix("stats:") {
                    for field in value.split_whitespace() {
                        let (key, num) = field
                            .split_once('=')
                            .ok_or_else(|| bad_header(line_no, "stats field without '='"))?;
                        let num: usize = num
                            .parse()
                            .map_err(|_| bad_header(line_no, "non-numeric stats field"))?;
                        match key {
                            "raw" => stats.raw_pair_count = num,
                            "distinct" => stats.distinct_term_count = num,
                            "unambiguous" => stats.unambiguous_count = num,
                            "ambiguous" => stats.ambiguous_count = num,
                            _ => return Err(bad_header(line_no, "unknown stats field")),
                        }
                    }
                } else if let Some(value) = comment.strip_prefix("source:") {
                    sources.push(value.trim().to_string());
                } else if let Some(value) = comment.strip_prefix("ambiguous-term:") {
                    ambiguous_terms.insert(value.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (term, code_raw) = line.split_once('\t').ok_or(DictionaryError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
            })?;
            let code = parse_code(code_raw).map_err(|e| DictionaryError::Code {
                path: path.to_path_buf(),
                line: line_no,
                source: e,
            })?;
            entries.insert(term.to_string(), code);
        }

        let level = level.ok_or_else(|| bad_header(0, "missing level header"))?;
        Ok(Dictionary {
            language,
            level,
            entries,
            ambiguous_terms,
            stats,
            sources,
        })
    }
}

impl fmt::Display for DictionaryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "raw={} distinct={} unambiguous={} ambiguous={}",
            self.raw_pair_count, self.distinct_term_count, self.unambiguous_count, self.ambiguous_count
        )
    }
}
