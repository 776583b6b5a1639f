//! ICD-10 code grammar and level-based truncation.
//!
//! Codes are treated as grammar-valid strings: a category of one uppercase
//! letter and two digits, plus an optional extension of up to four
//! uppercase alphanumerics after the dot. No validation against the
//! official code list happens here.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A syntactically valid ICD-10 code.
///
/// Canonical rendering is the uppercase category alone (`R51`) or the
/// category and extension joined by a dot (`B67.99`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Icd10Code {
    category: String,
    extension: String,
}

/// Granularity at which codes are truncated and compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeLevel {
    /// First 3 characters (`B67`).
    Category,
    /// Category plus the first extension character (`B67.9`).
    Subcategory,
    /// The code as given.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed ICD-10 code {raw:?}: {reason}")]
pub struct MalformedCode {
    pub raw: String,
    pub reason: String,
}

impl MalformedCode {
    fn new(raw: &str, reason: impl Into<String>) -> Self {
        Self {
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }
}

/// Parses a raw code string into a validated [`Icd10Code`].
///
/// Input is trimmed of whitespace and surrounding quotes and uppercased.
/// Both dotted (`b67.99`) and undotted (`b6799`) forms are accepted; the
/// undotted form is split after the third character.
pub fn parse_code(raw: &str) -> Result<Icd10Code, MalformedCode> {
    let trimmed = raw
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}'))
        .trim();
    if trimmed.is_empty() {
        return Err(MalformedCode::new(raw, "empty after trimming"));
    }
    let upper = trimmed.to_uppercase();

    let (category, extension) = match upper.find('.') {
        Some(pos) => {
            if pos != 3 {
                return Err(MalformedCode::new(raw, "dot must follow a 3-character category"));
            }
            let ext = &upper[pos + 1..];
            if ext.contains('.') {
                return Err(MalformedCode::new(raw, "more than one dot"));
            }
            (&upper[..pos], ext)
        }
        None => {
            if upper.len() < 3 {
                return Err(MalformedCode::new(raw, "shorter than a 3-character category"));
            }
            if !upper.is_char_boundary(3) {
                return Err(MalformedCode::new(raw, "category must be ASCII"));
            }
            upper.split_at(3)
        }
    };

    let cat_chars: Vec<char> = category.chars().collect();
    if cat_chars.len() != 3
        || !cat_chars[0].is_ascii_uppercase()
        || !cat_chars[1].is_ascii_digit()
        || !cat_chars[2].is_ascii_digit()
    {
        return Err(MalformedCode::new(raw, "category must be a letter followed by two digits"));
    }
    if extension.len() > 4 {
        return Err(MalformedCode::new(raw, "extension longer than 4 characters"));
    }
    if !extension.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
        return Err(MalformedCode::new(raw, "extension must be uppercase alphanumeric"));
    }

    Ok(Icd10Code {
        category: category.to_string(),
        extension: extension.to_string(),
    })
}

/// Truncates a code to the given level.
pub fn truncate(code: &Icd10Code, level: CodeLevel) -> Icd10Code {
    match level {
        CodeLevel::Category => Icd10Code {
            category: code.category.clone(),
            extension: String::new(),
        },
        CodeLevel::Subcategory => Icd10Code {
            category: code.category.clone(),
            extension: code.extension.chars().take(1).collect(),
        },
        CodeLevel::Full => code.clone(),
    }
}

/// True iff the two codes render identically after truncation to `level`.
pub fn codes_match(a: &Icd10Code, b: &Icd10Code, level: CodeLevel) -> bool {
    truncate(a, level) == truncate(b, level)
}

impl Icd10Code {
    /// The 3-character category prefix.
    pub fn category(&self) -> &str {
        &self.category
    }

    /// The extension after the dot; empty for 3-character codes.
    pub fn extension(&self) -> &str {
        &self.extension
    }

    /// Canonical dotted uppercase rendering.
    pub fn render(&self) -> String {
        if self.extension.is_empty() {
            self.category.clone()
        } else {
            format!("{}.{}", self.category, self.extension)
        }
    }

    /// Truncated copy of this code; see [`truncate`].
    pub fn truncated(&self, level: CodeLevel) -> Icd10Code {
        truncate(self, level)
    }

    /// Level-sensitive comparison; see [`codes_match`].
    pub fn matches(&self, other: &Icd10Code, level: CodeLevel) -> bool {
        codes_match(self, other, level)
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.extension.is_empty() {
            f.write_str(&self.category)
        } else {
            write!(f, "{}.{}", self.category, self.extension)
        }
    }
}

impl FromStr for Icd10Code {
    type Err = MalformedCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_code(s)
    }
}

impl TryFrom<String> for Icd10Code {
    type Error = MalformedCode;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_code(&s)
    }
}

impl From<Icd10Code> for String {
    fn from(code: Icd10Code) -> String {
        code.render()
    }
}

impl fmt::Display for CodeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CodeLevel::Category => "category",
            CodeLevel::Subcategory => "subcategory",
            CodeLevel::Full => "full",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown code level {0:?}; expected category, subcategory or full")]
pub struct UnknownLevel(pub String);

impl FromStr for CodeLevel {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "category" | "cat" => Ok(CodeLevel::Category),
            "subcategory" | "subcat" => Ok(CodeLevel::Subcategory),
            "full" => Ok(CodeLevel::Full),
            _ => Err(UnknownLevel(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(s: &str) -> Icd10Code {
        parse_code(s).unwrap()
    }

    #[test]
    fn parses_dotted_code() {
        let c = code("B67.99");
        assert_eq!(c.category(), "B67");
        assert_eq!(c.extension(), "99");
        assert_eq!(c.render(), "B67.99");
    }

    #[test]
    fn parses_lowercase_code() {
        let c = code("c64.9");
        assert_eq!(c.category(), "C64");
        assert_eq!(c.extension(), "9");
    }

    #[test]
    fn parses_bare_category() {
        let c = code("R51");
        assert_eq!(c.category(), "R51");
        assert_eq!(c.extension(), "");
        assert_eq!(c.render(), "R51");
    }

    #[test]
    fn parses_undotted_form() {
        assert_eq!(code("b6799"), code("B67.99"));
        assert_eq!(code("s060X1A").render(), "S06.0X1A");
    }

    #[test]
    fn parses_quoted_input() {
        assert_eq!(code("\"R51\""), code("R51"));
        assert_eq!(code("  'b67.4' "), code("B67.4"));
    }

    #[test]
    fn rejects_digit_first_character() {
        assert!(parse_code("5B1").is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        for raw in ["", "  ", "B6", "BAA", "B67.99999", "B67.9-9", "B6.799", "Β67", "B67..9"] {
            assert!(parse_code(raw).is_err(), "expected error for {raw:?}");
        }
    }

    #[test]
    fn truncates_to_category() {
        assert_eq!(truncate(&code("B67.99"), CodeLevel::Category).render(), "B67");
    }

    #[test]
    fn truncates_to_subcategory() {
        assert_eq!(truncate(&code("B67.99"), CodeLevel::Subcategory).render(), "B67.9");
        assert_eq!(truncate(&code("R51"), CodeLevel::Subcategory).render(), "R51");
    }

    #[test]
    fn full_truncation_is_identity() {
        assert_eq!(truncate(&code("B67.99"), CodeLevel::Full), code("B67.99"));
    }

    #[test]
    fn category_match_ignores_extension() {
        assert!(codes_match(&code("B67.99"), &code("B67.4"), CodeLevel::Category));
        assert!(!codes_match(&code("B67.99"), &code("B67.4"), CodeLevel::Subcategory));
        assert!(codes_match(&code("C64.9"), &code("C64.9"), CodeLevel::Subcategory));
    }

    #[test]
    fn serde_round_trips_canonical_string() {
        let c = code("b6799");
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "\"B67.99\"");
        let back: Icd10Code = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn level_from_str() {
        assert_eq!("category".parse::<CodeLevel>().unwrap(), CodeLevel::Category);
        assert_eq!("Subcategory".parse::<CodeLevel>().unwrap(), CodeLevel::Subcategory);
        assert!("chapter".parse::<CodeLevel>().is_err());
    }

    proptest! {
        #[test]
        fn parse_render_round_trip(cat_letter in 'A'..='Z', digits in 0u8..100, ext in "[A-Z0-9]{0,4}") {
            let raw = format!("{}{:02}{}{}", cat_letter, digits, if ext.is_empty() { "" } else { "." }, ext);
            let c = parse_code(&raw).unwrap();
            prop_assert_eq!(c.render(), raw.clone());
            prop_assert_eq!(parse_code(&c.render()).unwrap(), c);
        }

        #[test]
        fn case_and_dot_insensitive(cat_letter in 'A'..='Z', digits in 0u8..100, ext in "[A-Z0-9]{1,4}") {
            let dotted = format!("{}{:02}.{}", cat_letter, digits, ext);
            let undotted = format!("{}{:02}{}", cat_letter, digits, ext).to_lowercase();
            prop_assert_eq!(parse_code(&dotted).unwrap(), parse_code(&undotted).unwrap());
        }

        #[test]
        fn truncation_idempotent(cat_letter in 'A'..='Z', digits in 0u8..100, ext in "[A-Z0-9]{0,4}") {
            let raw = format!("{}{:02}{}", cat_letter, digits, ext);
            let c = parse_code(&raw).unwrap();
            for level in [CodeLevel::Category, CodeLevel::Subcategory, CodeLevel::Full] {
                let once = truncate(&c, level);
                prop_assert_eq!(truncate(&once, level), once.clone());
            }
        }

        #[test]
        fn matching_is_monotone(a in "[A-Z][0-9]{2}[A-Z0-9]{0,4}", b in "[A-Z][0-9]{2}[A-Z0-9]{0,4}") {
            let ca = parse_code(&a).unwrap();
            let cb = parse_code(&b).unwrap();
            if codes_match(&ca, &cb, CodeLevel::Full) {
                prop_assert!(codes_match(&ca, &cb, CodeLevel::Subcategory));
            }
            if codes_match(&ca, &cb, CodeLevel::Subcategory) {
                prop_assert!(codes_match(&ca, &cb, CodeLevel::Category));
            }
        }
    }
}
