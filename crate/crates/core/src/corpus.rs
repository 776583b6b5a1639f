//! Annotated discharge-summary corpora.
//!
//! A corpus is a directory of `<doc_id>.txt` files plus an annotations TSV
//! (`doc_id<TAB>start<TAB>end<TAB>surface<TAB>gold_code`, gold optional).
//! Offsets are Unicode scalar-value offsets, end exclusive. Marked
//! rendering wraps each mention in asterisks for prompting.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::ontology::{parse_code, Icd10Code, MalformedCode};

/// One discharge summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub language: String,
}

/// A labeled span inside a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    /// Char offset of the first character.
    pub start: usize,
    /// Char offset one past the last character.
    pub end: usize,
    pub surface: String,
    pub gold_code: Option<Icd10Code>,
}

/// A document with its kept mentions wrapped as `*surface*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedDocument {
    pub doc_id: String,
    pub marked_text: String,
    /// Indices into the input mention slice, ascending by start, for the
    /// mentions that were actually marked.
    pub mention_order: Vec<usize>,
}

/// What to do when mention spans overlap during marking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// Keep the longer mention, drop the other with a warning.
    #[default]
    KeepLonger,
    /// Refuse to render overlapping mentions.
    Strict,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed annotation, expected doc_id<TAB>start<TAB>end<TAB>surface[<TAB>gold_code]")]
    MalformedAnnotation { path: PathBuf, line: usize },
    #[error("{path}:{line}: {source}")]
    Code {
        path: PathBuf,
        line: usize,
        #[source]
        source: MalformedCode,
    },
    #[error("annotation references missing document {doc_id:?}")]
    MissingDocument { doc_id: String },
    #[error("document {doc_id:?} is empty")]
    EmptyDocument { doc_id: String },
    #[error("span {start}..{end} out of bounds for document {doc_id:?} of length {len}")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("surface mismatch in {doc_id:?} at {start}..{end}: annotation {surface:?}, text {slice:?}")]
    SurfaceMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        slice: String,
    },
    #[error("mention {surface:?} belongs to document {mention_doc:?}, not {doc_id:?}")]
    DocMismatch {
        doc_id: String,
        mention_doc: String,
        surface: String,
    },
    #[error("overlapping mentions in {doc_id:?}: {first_start}..{first_end} and {second_start}..{second_end}")]
    OverlapConflict {
        doc_id: String,
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },
}

/// A raw annotation row, before validation against document text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold_code: Option<Icd10Code>,
}

/// Parses an annotations TSV without validating spans against documents.
pub fn read_annotation_records(path: &Path) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(CorpusError::MalformedAnnotation {
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        let start: usize = fields[1].trim().parse().map_err(|_| CorpusError::MalformedAnnotation {
            path: path.to_path_buf(),
            line: line_no,
        })?;
        let end: usize = fields[2].trim().parse().map_err(|_| CorpusError::MalformedAnnotation {
            path: path.to_path_buf(),
            line: line_no,
        })?;
        let gold_code = match fields.get(4).map(|s| s.trim()) {
            None | Some("") => None,
            Some(raw) => Some(parse_code(raw).map_err(|e| CorpusError::Code {
                path: path.to_path_buf(),
                line: line_no,
                source: e,
            })?),
        };
        records.push(AnnotationRecord {
            doc_id: fields[0].trim().to_string(),
            start,
            end,
            surface: fields[3].to_string(),
            gold_code,
        });
    }
    Ok(records)
}

/// Loads every `<doc_id>.txt` under `text_dir` and the annotations TSV,
/// validating each span against its document. Mentions come back sorted
/// by `(doc_id, start)`.
pub fn load_corpus(
    text_dir: &Path,
    annotations_path: &Path,
    language: &str,
) -> Result<(Vec<Document>, Vec<Mention>), CorpusError> {
    let read_dir = fs::read_dir(text_dir).map_err(|e| CorpusError::Io {
        path: text_dir.to_path_buf(),
        source: e,
    })?;
    let mut documents = Vec::new();
    for entry in read_dir {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: text_dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let doc_id = match path.file_stem().and_then(|s| s.to_str()) {
            Some(stem) => stem.to_string(),
            None => continue,
        };
        let text = fs::read_to_string(&path).map_err(|e| CorpusError::Io {
            path: path.clone(),
            source: e,
        })?;
        if text.is_empty() {
            return Err(CorpusError::EmptyDocument { doc_id });
        }
        documents.push(Document {
            doc_id,
            text,
            language: language.to_string(),
        });
    }
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let char_lens: BTreeMap<&str, usize> = documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d.text.chars().count()))
        .collect();
    let texts: BTreeMap<&str, &str> = documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d.text.as_str()))
        .collect();

    let mut mentions = Vec::new();
    for record in read_annotation_records(annotations_path)? {
        let len = *char_lens
            .get(record.doc_id.as_str())
            .ok_or(CorpusError::MissingDocument {
                doc_id: record.doc_id.clone(),
            })?;
        if record.start >= record.end || record.end > len {
            return Err(CorpusError::SpanOutOfBounds {
                doc_id: record.doc_id,
                start: record.start,
                end: record.end,
                len,
            });
        }
        let slice: String = texts[record.doc_id.as_str()]
            .chars()
            .skip(record.start)
            .take(record.end - record.start)
            .collect();
        if slice != record.surface {
            return Err(CorpusError::SurfaceMismatch {
                doc_id: record.doc_id,
                start: record.start,
                end: record.end,
                surface: record.surface,
                slice,
            });
        }
        mentions.push(Mention {
            doc_id: record.doc_id,
            start: record.start,
            end: record.end,
            surface: record.surface,
            gold_code: record.gold_code,
        });
    }
    mentions.sort_by(|a, b| (&a.doc_id, a.start, a.end).cmp(&(&b.doc_id, b.start, b.end)));
    Ok((documents, mentions))
}

/// Wraps each kept mention of `doc` in asterisks.
///
/// Mentions are taken in ascending start order; overlaps are resolved per
/// `policy` before insertion. Insertions never shift other offsets because
/// the output is assembled in one pass over the characters.
pub fn render_marked_text(
    doc: &Document,
    mentions: &[Mention],
    policy: OverlapPolicy,
) -> Result<MarkedDocument, CorpusError> {
    for m in mentions {
        if m.doc_id != doc.doc_id {
            return Err(CorpusError::DocMismatch {
                doc_id: doc.doc_id.clone(),
                mention_doc: m.doc_id.clone(),
                surface: m.surface.clone(),
            });
        }
    }
    if doc.text.contains('*') {
        warn!(doc_id = %doc.doc_id, "document text already contains asterisks; marker stripping will be lossy");
    }

    let mut order: Vec<usize> = (0..mentions.len()).collect();
    order.sort_by_key(|&i| (mentions[i].start, mentions[i].end));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let m = &mentions[idx];
        match kept.last().copied() {
            Some(last_idx) if mentions[last_idx].end > m.start => {
                let last = &mentions[last_idx];
                if policy == OverlapPolicy::Strict {
                    return Err(CorpusError::OverlapConflict {
                        doc_id: doc.doc_id.clone(),
                        first_start: last.start,
                        first_end: last.end,
                        second_start: m.start,
                        second_end: m.end,
                    });
                }
                if m.end - m.start > last.end - last.start {
                    warn!(
                        doc_id = %doc.doc_id,
                        dropped = %last.surface,
                        kept = %m.surface,
                        "dropping overlapping mention in favor of longer one"
                    );
                    *kept.last_mut().unwrap() = idx;
                } else {
                    warn!(
                        doc_id = %doc.doc_id,
                        dropped = %m.surface,
                        kept = %last.surface,
                        "dropping overlapping mention"
                    );
                }
            }
            _ => kept.push(idx),
        }
    }

    let starts: std::collections::BTreeSet<usize> = kept.iter().map(|&i| mentions[i].start).collect();
    let ends: std::collections::BTreeSet<usize> = kept.iter().map(|&i| mentions[i].end).collect();

    let char_count = doc.text.chars().count();
    let mut marked = String::with_capacity(doc.text.len() + 2 * kept.len());
    for (pos, c) in doc.text.chars().enumerate() {
        if ends.contains(&pos) {
            marked.push('*');
        }
        if starts.contains(&pos) {
            marked.push('*');
        }
        marked.push(c);
    }
    if ends.contains(&char_count) {
        marked.push('*');
    }

    Ok(MarkedDocument {
        doc_id: doc.doc_id.clone(),
        marked_text: marked,
        mention_order: kept,
    })
}
