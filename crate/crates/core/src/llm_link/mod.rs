//! LLM linking stage: prompt construction, response parsing, and
//! alignment of returned terms back to mention spans.

pub mod provider;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::corpus::{MarkedDocument, Mention};
use crate::dictionary::normalize_term;
use crate::ontology::{parse_code, Icd10Code};

pub use provider::{Completion, LlmProvider, MockProvider, ProviderError, RemoteProvider, RetryPolicy};

/// Number of worked examples included in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotMode {
    Zero,
    One,
}

/// Everything needed to instantiate the prompt template for one language.
#[derive(Debug, Clone)]
pub struct PromptConfig {
    /// Human-readable language name substituted for `{language}`,
    /// e.g. "Greek" or "Spanish".
    pub language_name: String,
    pub shots: ShotMode,
    pub example_input: Option<String>,
    pub example_output: Option<String>,
    /// Template text with `{language}`, `{example_input}`,
    /// `{example_output}` and `{clinical_text}` placeholders.
    pub template: String,
}

/// Default prompt template (English instructions, parameterized language).
pub const DEFAULT_TEMPLATE: &str = include_str!("../../../../templates/icd10_prompt_en.txt");

/// Prompt template variant with instructions written in Spanish.
pub const SPANISH_TEMPLATE: &str = include_str!("../../../../templates/icd10_prompt_es.txt");

/// Parameters of one completion call.
#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt_text: String,
    /// Optional key (the doc id) used by fixture-backed providers and logs.
    pub tag: Option<String>,
}

/// One element of the model's JSON array output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermPrediction {
    pub term: String,
    pub codes: Vec<Icd10Code>,
    pub explanation: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template is missing the {{{0}}} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("one-shot prompt requires example_input and example_output")]
    MissingExample,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON array found in model response")]
    NoJsonFound,
}

/// Renders the prompt for one marked document.
///
/// `{language}` is substituted everywhere, `{clinical_text}` with the
/// marked text. In zero-shot mode the whole example block — the
/// placeholder lines plus their surrounding fence and header lines — is
/// removed before substitution.
pub fn build_prompt(config: &PromptConfig, marked: &MarkedDocument) -> Result<String, PromptError> {
    if !config.template.contains("{language}") {
        return Err(PromptError::MissingPlaceholder("language"));
    }
    if !config.template.contains("{clinical_text}") {
        return Err(PromptError::MissingPlaceholder("clinical_text"));
    }

    let template = match config.shots {
        ShotMode::Zero => strip_example_block(&config.template),
        ShotMode::One => {
            if !config.template.contains("{example_input}") {
                return Err(PromptError::MissingPlaceholder("example_input"));
            }
            if !config.template.contains("{example_output}") {
                return Err(PromptError::MissingPlaceholder("example_output"));
            }
            config.template.clone()
        }
    };

    let mut prompt = template
        .replace("{language}", &config.language_name)
        .replace("{clinical_text}", &marked.marked_text);
    if config.shots == ShotMode::One {
        let (input, output) = match (&config.example_input, &config.example_output) {
            (Some(i), Some(o)) => (i, o),
            _ => return Err(PromptError::MissingExample),
        };
        prompt = prompt
            .replace("{example_input}", input)
            .replace("{example_output}", output);
    }
    Ok(prompt)
}

/// Removes the example block: the lines holding `{example_input}` and
/// `{example_output}` together with adjacent fence lines (```) and
/// `**Example ...**` headers.
fn strip_example_block(template: &str) -> String {
    let lines: Vec<&str> = template.split_inclusive('\n').collect();
    let line_of = |needle: &str| {
        lines
            .iter()
            .position(|l| l.contains(needle))
    };
    let (input_line, output_line) = match (line_of("{example_input}"), line_of("{example_output}")) {
        (Some(a), Some(b)) => (a.min(b), a.max(b)),
        (Some(a), None) | (None, Some(a)) => (a, a),
        (None, None) => return template.to_string(),
    };

    let is_framing = |line: &str| {
        let t = line.trim_start();
        t.starts_with("```") || t.starts_with("**Example")
    };
    let mut start = input_line;
    while start > 0 && is_framing(lines[start - 1]) {
        start -= 1;
    }
    let mut end = output_line;
    while end + 1 < lines.len() && lines[end + 1].trim_start().starts_with("```") {
        end += 1;
    }

    lines[..start].concat() + &lines[end + 1..].concat()
}

/// Extracts the first JSON array from the raw model output and converts
/// its elements into [`TermPrediction`]s.
///
/// Surrounding prose and code fences are tolerated. Elements missing a
/// usable term or with unparseable codes are dropped with a warning; an
/// empty array is a valid empty result.
pub fn parse_response(raw: &str) -> Result<Vec<TermPrediction>, ParseError> {
    let array = find_first_json_array(raw).ok_or(ParseError::NoJsonFound)?;
    let mut predictions = Vec::new();
    for element in &array {
        match element_to_prediction(element) {
            Some(pred) => predictions.push(pred),
            None => warn!(element = %element, "dropping unusable response element"),
        }
    }
    Ok(predictions)
}

fn element_to_prediction(element: &Value) -> Option<TermPrediction> {
    let obj = element.as_object()?;
    let term_raw = obj
        .iter()
        .find(|(key, _)| key.starts_with("medical_term"))
        .and_then(|(_, v)| v.as_str())?;
    let term = term_raw.replace('*', "").trim().to_string();
    if term.is_empty() {
        return None;
    }

    let codes = match obj.get("icd10_code") {
        Some(Value::String(s)) => s
            .split(',')
            .map(|c| parse_code(c))
            .collect::<Result<Vec<_>, _>>()
            .ok()?,
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().and_then(|s| parse_code(s).ok()))
            .collect::<Option<Vec<_>>>()?,
        _ => return None,
    };
    if codes.is_empty() {
        return None;
    }

    let explanation = obj
        .get("explanation")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    Some(TermPrediction {
        term,
        codes,
        explanation,
    })
}

/// Finds the first substring of `raw` that parses as a JSON array.
fn find_first_json_array(raw: &str) -> Option<Vec<Value>> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = raw[search_from..].find('[') {
        let start = search_from + rel;
        if let Some(end) = matching_bracket(bytes, start) {
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&raw[start..=end]) {
                return Some(items);
            }
        }
        search_from = start + 1;
    }
    None
}

/// Byte index of the `]` matching the `[` at `start`, string-aware.
fn matching_bracket(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return if b == b']' { Some(i) } else { None };
                }
            }
            _ => {}
        }
    }
    None
}

/// Greedy in-order assignment of predictions to mentions.
///
/// Each prediction goes to the earliest unassigned mention whose
/// normalized surface equals the normalized predicted term. Predictions
/// without a matching mention are discarded with a warning; unmatched
/// mentions stay `None`.
pub fn align_predictions(
    mentions: &[Mention],
    predictions: Vec<TermPrediction>,
) -> Vec<Option<TermPrediction>> {
    let normalized_surfaces: Vec<String> = mentions.iter().map(|m| normalize_term(&m.surface)).collect();
    let mut assigned: Vec<Option<TermPrediction>> = (0..mentions.len()).map(|_| None).collect();

    for pred in predictions {
        let key = normalize_term(&pred.term);
        if key.is_empty() {
            warn!(term = %pred.term, "discarding prediction with empty normalized term");
            continue;
        }
        let slot = normalized_surfaces
            .iter()
            .enumerate()
            .position(|(i, surface)| assigned[i].is_none() && *surface == key);
        match slot {
            Some(i) => assigned[i] = Some(pred),
            None => warn!(term = %pred.term, "discarding prediction with no matching mention"),
        }
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marked(text: &str) -> MarkedDocument {
        MarkedDocument {
            doc_id: "d1".into(),
            marked_text: text.into(),
            mention_order: vec![],
        }
    }

    fn one_shot_config() -> PromptConfig {
        PromptConfig {
            language_name: "Greek".into(),
            shots: ShotMode::One,
            example_input: Some("Ο ασθενής παρουσίασε *κεφαλαλγία*.".into()),
            example_output: Some(r#"[{"medical_term_greek": "*κεφαλαλγία*", "icd10_code": "R51", "explanation": "headache"}]"#.into()),
            template: DEFAULT_TEMPLATE.into(),
        }
    }

    #[test]
    fn one_shot_prompt_contains_language_example_and_text() {
        let prompt = build_prompt(&one_shot_config(), &marked("…με *στηθάγχη*…")).unwrap();
        assert!(prompt.contains("fluent in Greek"));
        assert!(prompt.contains("Ο ασθενής παρουσίασε *κεφαλαλγία*."));
        assert!(prompt.contains("…με *στηθάγχη*…"));
        assert!(!prompt.contains("{language}"));
        assert!(!prompt.contains("{clinical_text}"));
        assert!(!prompt.contains("{example_input}"));
        assert!(!prompt.contains("{example_output}"));
    }

    #[test]
    fn zero_shot_prompt_omits_example_section() {
        let mut config = one_shot_config();
        config.shots = ShotMode::Zero;
        config.example_input = None;
        config.example_output = None;
        let prompt = build_prompt(&config, &marked("texto *cefalea*")).unwrap();
        assert!(!prompt.contains("Example Input"));
        assert!(!prompt.contains("Example Output"));
        assert!(!prompt.contains("{example_input}"));
        assert!(prompt.contains("texto *cefalea*"));
        // the instruction tail after the example block must survive
        assert!(prompt.contains("analyze the following patient discharge summary"));
    }

    #[test]
    fn missing_clinical_text_placeholder_is_an_error() {
        let mut config = one_shot_config();
        config.template = "only {language} here".into();
        let err = build_prompt(&config, &marked("x")).unwrap_err();
        assert_eq!(err, PromptError::MissingPlaceholder("clinical_text"));
    }

    #[test]
    fn one_shot_without_examples_is_an_error() {
        let mut config = one_shot_config();
        config.example_input = None;
        let err = build_prompt(&config, &marked("x")).unwrap_err();
        assert_eq!(err, PromptError::MissingExample);
    }

    #[test]
    fn prompt_is_deterministic() {
        let config = one_shot_config();
        let m = marked("texto *cefalea*");
        assert_eq!(build_prompt(&config, &m).unwrap(), build_prompt(&config, &m).unwrap());
    }

    #[test]
    fn spanish_template_variant_builds() {
        let mut config = one_shot_config();
        config.template = SPANISH_TEMPLATE.into();
        config.language_name = "Spanish".into();
        let prompt = build_prompt(&config, &marked("texto *cefalea*")).unwrap();
        assert!(prompt.contains("Spanish"));
        assert!(prompt.contains("texto *cefalea*"));
    }

    #[test]
    fn parses_plain_array() {
        let raw = r#"[{"medical_term_greek":"*κεφαλαλγία*","icd10_code":"R51","explanation":"common symptom"}]"#;
        let preds = parse_response(raw).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].term, "κεφαλαλγία");
        assert_eq!(preds[0].codes[0].render(), "R51");
        assert_eq!(preds[0].explanation, "common symptom");
    }

    #[test]
    fn parses_comma_separated_codes_in_order() {
        let raw = r#"[{"medical_term_es":"x","icd10_code":"B67.4, N28.1","explanation":""}]"#;
        let preds = parse_response(raw).unwrap();
        let rendered: Vec<String> = preds[0].codes.iter().map(|c| c.render()).collect();
        assert_eq!(rendered, vec!["B67.4", "N28.1"]);
    }

    #[test]
    fn fenced_and_unfenced_parse_identically() {
        let body = r#"[{"medical_term_greek":"x","icd10_code":"R51","explanation":"e"}]"#;
        let fenced = format!("```json\n{body}\n```");
        assert_eq!(parse_response(body).unwrap(), parse_response(&fenced).unwrap());
    }

    #[test]
    fn refusal_text_has_no_json() {
        assert_eq!(parse_response("I cannot help with that."), Err(ParseError::NoJsonFound));
    }

    #[test]
    fn empty_array_is_valid_empty_result() {
        assert_eq!(parse_response("[]").unwrap(), vec![]);
    }

    #[test]
    fn malformed_elements_are_dropped_not_fatal() {
        let raw = r#"[
            {"medical_term_greek":"good","icd10_code":"R51","explanation":""},
            {"medical_term_greek":"bad code","icd10_code":"51R","explanation":""},
            {"icd10_code":"R51"},
            "just a string"
        ]"#;
        let preds = parse_response(raw).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].term, "good");
    }

    #[test]
    fn missing_explanation_defaults_to_empty() {
        let raw = r#"[{"medical_term_greek":"x","icd10_code":"R51"}]"#;
        assert_eq!(parse_response(raw).unwrap()[0].explanation, "");
    }

    #[test]
    fn aligns_exact_match() {
        let mentions = vec![mention("cefalea")];
        let preds = vec![prediction("cefalea", "R51")];
        let aligned = align_predictions(&mentions, preds);
        assert_eq!(aligned[0].as_ref().unwrap().codes[0].render(), "R51");
    }

    #[test]
    fn duplicate_surfaces_assign_in_order() {
        let mentions = vec![mention("cefalea"), mention("cefalea")];
        let preds = vec![prediction("cefalea", "R51"), prediction("*Cefalea*", "G43.9")];
        let aligned = align_predictions(&mentions, preds);
        assert_eq!(aligned[0].as_ref().unwrap().codes[0].render(), "R51");
        assert_eq!(aligned[1].as_ref().unwrap().codes[0].render(), "G43.9");
    }

    #[test]
    fn unmatched_prediction_is_discarded() {
        let mentions = vec![mention("cefalea")];
        let preds = vec![prediction("dolor de cabeza", "R51")];
        let aligned = align_predictions(&mentions, preds);
        assert!(aligned[0].is_none());
    }

    #[test]
    fn no_double_assignment() {
        let mentions = vec![mention("cefalea")];
        let preds = vec![prediction("cefalea", "R51"), prediction("cefalea", "G43.9")];
        let aligned = align_predictions(&mentions, preds);
        assert_eq!(aligned.iter().flatten().count(), 1);
        assert_eq!(aligned[0].as_ref().unwrap().codes[0].render(), "R51");
    }

    fn mention(surface: &str) -> Mention {
        Mention {
            doc_id: "d1".into(),
            start: 0,
            end: surface.chars().count(),
            surface: surface.into(),
            gold_code: None,
        }
    }

    fn prediction(term: &str, code: &str) -> TermPrediction {
        TermPrediction {
            term: term.into(),
            codes: vec![parse_code(code).unwrap()],
            explanation: String::new(),
        }
    }
}
