//! Text normalization: uppercasing, punctuation stripping, number
//! verbalization, and whitespace collapsing.
//!
//! Normalization is idempotent: applying it twice yields the first result.
//! The passes run in a fixed order — verbalize digit runs, strip
//! punctuation, uppercase, collapse whitespace — so that verbalized words
//! are themselves subject to the later passes.

use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// ISO-639-1 style language code. The six known codes get full support in
/// the filtering defaults and number verbalization; anything else is carried
/// through as [`LanguageCode::Other`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LanguageCode {
    Ca,
    En,
    De,
    Fr,
    Es,
    It,
    Other(String),
}

impl LanguageCode {
    pub fn as_str(&self) -> &str {
        match self {
            LanguageCode::Ca => "ca",
            LanguageCode::En => "en",
            LanguageCode::De => "de",
            LanguageCode::Fr => "fr",
            LanguageCode::Es => "es",
            LanguageCode::It => "it",
            LanguageCode::Other(s) => s,
        }
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageCode {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ca" => LanguageCode::Ca,
            "en" => LanguageCode::En,
            "de" => LanguageCode::De,
            "fr" => LanguageCode::Fr,
            "es" => LanguageCode::Es,
            "it" => LanguageCode::It,
            other => LanguageCode::Other(other.to_string()),
        })
    }
}

impl Serialize for LanguageCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LanguageCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().expect("infallible"))
    }
}

/// Which normalization passes to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRules {
    #[serde(default = "default_true")]
    pub uppercase: bool,
    #[serde(default = "default_true")]
    pub strip_punctuation: bool,
    #[serde(default = "default_true")]
    pub verbalize_numbers: bool,
    #[serde(default = "default_language")]
    pub language: LanguageCode,
}

fn default_true() -> bool {
    true
}

fn default_language() -> LanguageCode {
    LanguageCode::En
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            uppercase: true,
            strip_punctuation: true,
            verbalize_numbers: true,
            language: LanguageCode::En,
        }
    }
}

impl NormalizationRules {
    pub fn for_language(language: LanguageCode) -> Self {
        NormalizationRules { language, ..NormalizationRules::default() }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NormalizeError {
    /// Number verbalization was requested for a language without digit
    /// tables. Callers may disable `verbalize_numbers` and retry.
    #[error("number verbalization is not supported for language {code:?}")]
    UnsupportedLanguage { code: String },
}

static PUNCT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\p{P}").expect("valid pattern"));

fn is_punct(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCT.is_match(c.encode_utf8(&mut buf))
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Normalize `text` under `rules`.
///
/// Passes, in order:
/// 1. **Verbalization** — every maximal run of ASCII digits is replaced by
///    its spelled-out form. English gets full number names up to 999,999;
///    runs with leading zeros or more than six digits fall back to
///    digit-by-digit spelling. The other known languages always spell
///    digit-by-digit (with a logged warning); requesting verbalization for
///    any other language is an error naming the code.
/// 2. **Punctuation stripping** — every Unicode punctuation character is
///    replaced by a space, except an apostrophe between two alphanumeric
///    characters, which is kept (and canonicalized to `'`).
/// 3. **Uppercasing.**
/// 4. **Whitespace collapsing** — any whitespace run becomes a single
///    space; leading/trailing whitespace is removed.
pub fn normalize_text(text: &str, rules: &NormalizationRules) -> Result<String, NormalizeError> {
    let mut s = if rules.verbalize_numbers { verbalize_digit_runs(text, &rules.language)? } else { text.to_string() };

    if rules.strip_punctuation {
        let chars: Vec<char> = s.chars().collect();
        let mut out = String::with_capacity(s.len());
        for (i, &c) in chars.iter().enumerate() {
            if is_punct(c) {
                let prev_alnum = i > 0 && chars[i - 1].is_alphanumeric();
                let next_alnum = i + 1 < chars.len() && chars[i + 1].is_alphanumeric();
                if is_apostrophe(c) && prev_alnum && next_alnum {
                    out.push('\'');
                } else {
                    out.push(' ');
                }
            } else {
                out.push(c);
            }
        }
        s = out;
    }

    if rules.uppercase {
        s = s.to_uppercase();
    }

    Ok(s.split_whitespace().collect::<Vec<_>>().join(" "))
}

fn verbalize_digit_runs(text: &str, language: &LanguageCode) -> Result<String, NormalizeError> {
    if let LanguageCode::Other(code) = language {
        if text.chars().any(|c| c.is_ascii_digit()) {
            return Err(NormalizeError::UnsupportedLanguage { code: code.clone() });
        }
        return Ok(text.to_string());
    }
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let run: String = chars[start..i].iter().collect();
            // Keep word boundaries around the verbalized form: "3cats"
            // becomes "three cats".
            if !out.is_empty() && !out.ends_with(char::is_whitespace) {
                out.push(' ');
            }
            out.push_str(&verbalize_run(&run, language));
            if i < chars.len() && !chars[i].is_whitespace() {
                out.push(' ');
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    Ok(out)
}

fn verbalize_run(run: &str, language: &LanguageCode) -> String {
    match language {
        LanguageCode::En => {
            let long = run.len() > 6;
            let leading_zero = run.len() > 1 && run.starts_with('0');
            if long || leading_zero {
                spell_digits(run, language)
            } else {
                number_to_words_en(run.parse::<u64>().expect("digit run parses"))
            }
        }
        LanguageCode::Other(_) => unreachable!("handled by caller"),
        other => {
            log::warn!(
                "number verbalization for language {other} falls back to digit-by-digit spelling"
            );
            spell_digits(run, language)
        }
    }
}

fn spell_digits(run: &str, language: &LanguageCode) -> String {
    let digits: &[&str; 10] = match language {
        LanguageCode::En => &["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"],
        LanguageCode::Ca => &["zero", "un", "dos", "tres", "quatre", "cinc", "sis", "set", "vuit", "nou"],
        LanguageCode::De => &["null", "eins", "zwei", "drei", "vier", "fünf", "sechs", "sieben", "acht", "neun"],
        LanguageCode::Fr => &["zéro", "un", "deux", "trois", "quatre", "cinq", "six", "sept", "huit", "neuf"],
        LanguageCode::Es => &["cero", "uno", "dos", "tres", "cuatro", "cinco", "seis", "siete", "ocho", "nueve"],
        LanguageCode::It => &["zero", "uno", "due", "tre", "quattro", "cinque", "sei", "sette", "otto", "nove"],
        LanguageCode::Other(_) => unreachable!("no digit table"),
    };
    run.chars()
        .map(|c| digits[c.to_digit(10).expect("ascii digit") as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

const ONES_EN: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];

const TENS_EN: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// English number name for 0..=999,999 (space-separated, no hyphens or "and").
pub fn number_to_words_en(n: u64) -> String {
    assert!(n <= 999_999, "number_to_words_en covers 0..=999999, got {n}");
    if n >= 1000 {
        let thousands = n / 1000;
        let rest = n % 1000;
        let mut words = format!("{} thousand", under_thousand_en(thousands));
        if rest > 0 {
            words.push(' ');
            words.push_str(&under_thousand_en(rest));
        }
        return words;
    }
    under_thousand_en(n)
}

fn under_thousand_en(n: u64) -> String {
    debug_assert!(n < 1000);
    if n >= 100 {
        let hundreds = n / 100;
        let rest = n % 100;
        let mut words = format!("{} hundred", ONES_EN[hundreds as usize]);
        if rest > 0 {
            words.push(' ');
            words.push_str(&under_hundred_en(rest));
        }
        return words;
    }
    under_hundred_en(n)
}

fn under_hundred_en(n: u64) -> String {
    debug_assert!(n < 100);
    if n < 20 {
        ONES_EN[n as usize].to_string()
    } else {
        let tens = TENS_EN[(n / 10) as usize];
        if n % 10 == 0 {
            tens.to_string()
        } else {
            format!("{tens} {}", ONES_EN[(n % 10) as usize])
        }
    }
}
