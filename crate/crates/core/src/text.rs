//! Text normalization: raw section text to a list of lowercase lemmas.
//!
//! Stages run in a fixed order: lowercase, contraction expansion, URL removal,
//! accent folding, digit verbalization, punctuation removal, whitespace
//! tokenization, stopword removal and dictionary lemmatization.
//!
//! The stopword, contraction and lemma tables ship in `data/` and are compiled
//! in; [`TextPipeline::from_paths`] loads replacements from disk.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const CONTRACTIONS: &str = include_str!("../data/contractions.tsv");
const LEMMAS: &str = include_str!("../data/lemmas.tsv");

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:\b[a-z][a-z0-9+.\-]*://|\bwww\.)\S*").unwrap());

static DEFAULT: LazyLock<TextPipeline> = LazyLock::new(|| {
    TextPipeline::from_tables(STOPWORDS, CONTRACTIONS, LEMMAS).expect("shipped tables are valid")
});

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{table} line {line}: {reason}")]
    Invalid {
        table: &'static str,
        line: usize,
        reason: String,
    },
}

/// Cleaned token sequence. Tokens are nonempty and consist of `a-z` only.
pub type TokenList = Vec<String>;

#[derive(Debug, Clone)]
pub struct TextPipeline {
    stopwords: HashSet<String>,
    contractions: HashMap<String, String>,
    contraction_re: Option<Regex>,
    lemmas: HashMap<String, String>,
}

impl Default for TextPipeline {
    fn default() -> Self {
        DEFAULT.clone()
    }
}

impl TextPipeline {
    /// Shared instance built from the shipped tables.
    pub fn shipped() -> &'static TextPipeline {
        &DEFAULT
    }

    pub fn from_paths(
        stopwords: impl AsRef<Path>,
        contractions: impl AsRef<Path>,
        lemmas: impl AsRef<Path>,
    ) -> Result<Self, TableError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TableError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        Self::from_tables(
            &read(stopwords.as_ref())?,
            &read(contractions.as_ref())?,
            &read(lemmas.as_ref())?,
        )
    }

    /// Builds a pipeline from table contents.
    ///
    /// Tables are validated so the pipeline stays idempotent on its own output:
    /// contraction keys must contain an apostrophe, and lemma targets must be
    /// `a-z` words that are neither stopwords nor themselves inflected forms.
    pub fn from_tables(
        stopwords: &str,
        contractions: &str,
        lemmas: &str,
    ) -> Result<Self, TableError> {
        let stopwords: HashSet<String> = data_lines(stopwords)
            .map(|(_, l)| l.to_lowercase())
            .collect();

        let mut contraction_map = HashMap::new();
        for (line, l) in data_lines(contractions) {
            let (from, to) = split_pair(l).ok_or_else(|| TableError::Invalid {
                table: "contractions",
                line,
                reason: "expected `form<TAB>expansion`".into(),
            })?;
            let from = from.to_lowercase();
            if !from.contains('\'') {
                return Err(TableError::Invalid {
                    table: "contractions",
                    line,
                    reason: format!("`{from}` has no apostrophe"),
                });
            }
            contraction_map
                .entry(from)
                .or_insert_with(|| to.to_lowercase());
        }
        let contraction_re = if contraction_map.is_empty() {
            None
        } else {
            let mut keys: Vec<&String> = contraction_map.keys().collect();
            keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
            let alt = keys
                .iter()
                .map(|k| regex::escape(k))
                .collect::<Vec<_>>()
                .join("|");
            Some(Regex::new(&format!(r"\b(?:{alt})\b")).expect("escaped alternation"))
        };

        let mut lemma_map = HashMap::new();
        for (line, l) in data_lines(lemmas) {
            let (from, to) = split_pair(l).ok_or_else(|| TableError::Invalid {
                table: "lemmas",
                line,
                reason: "expected `inflected<TAB>lemma`".into(),
            })?;
            let is_word = |w: &str| !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase());
            if !is_word(from) || !is_word(to) {
                return Err(TableError::Invalid {
                    table: "lemmas",
                    line,
                    reason: format!("`{from}` -> `{to}` is not a lowercase a-z pair"),
                });
            }
            if stopwords.contains(to) {
                return Err(TableError::Invalid {
                    table: "lemmas",
                    line,
                    reason: format!("lemma `{to}` is a stopword"),
                });
            }
            lemma_map
                .entry(from.to_string())
                .or_insert_with(|| to.to_string());
        }
        for (from, to) in &lemma_map {
            if to != from && lemma_map.get(to).is_some_and(|t| t != to) {
                return Err(TableError::Invalid {
                    table: "lemmas",
                    line: 0,
                    reason: format!("lemma `{to}` of `{from}` is itself inflected"),
                });
            }
        }

        Ok(Self {
            stopwords,
            contractions: contraction_map,
            contraction_re,
            lemmas: lemma_map,
        })
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn lemma<'a>(&'a self, token: &'a str) -> &'a str {
        self.lemmas.get(token).map(String::as_str).unwrap_or(token)
    }

    pub fn preprocess(&self, text: &str) -> TokenList {
        // curly apostrophes are common in pasted profile text
        let lowered = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
        let expanded = match &self.contraction_re {
            Some(re) => re
                .replace_all(&lowered, |caps: &regex::Captures| {
                    self.contractions[&caps[0]].clone()
                })
                .into_owned(),
            None => lowered,
        };
        let no_urls = URL.replace_all(&expanded, " ");
        let folded = fold_accents(&no_urls);
        let verbalized = verbalize_digits(&folded);
        let stripped = strip_punctuation(&verbalized);
        stripped
            .split_whitespace()
            .filter(|t| !self.stopwords.contains(*t))
            .map(|t| self.lemma(t).to_string())
            .collect()
    }
}

/// Runs the shipped pipeline.
pub fn preprocess(text: &str) -> TokenList {
    DEFAULT.preprocess(text)
}

/// Tokenizes a tag phrase: lowercase and whitespace split only.
pub fn preprocess_tag(phrase: &str) -> TokenList {
    phrase
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn data_lines(table: &str) -> impl Iterator<Item = (usize, &str)> {
    table
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let (a, b) = line.split_once('\t')?;
    let (a, b) = (a.trim(), b.trim());
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

fn fold_accents(text: &str) -> String {
    text.nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Replaces every run of ASCII digits with English words, padded by spaces.
fn verbalize_digits(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut digits = String::new();
    for c in text.chars().chain(std::iter::once('\0')) {
        if c.is_ascii_digit() {
            digits.push(c);
            continue;
        }
        if !digits.is_empty() {
            out.push(' ');
            out.push_str(&digits_to_words(&digits));
            out.push(' ');
            digits.clear();
        }
        if c != '\0' {
            out.push(c);
        }
    }
    out
}

const ONES: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// Integers 0..=9999 are spelled as numbers; longer runs and runs with a
/// leading zero are read digit by digit.
pub fn digits_to_words(digits: &str) -> String {
    let spelled = digits.len() <= 4 && (digits.len() == 1 || !digits.starts_with('0'));
    if spelled {
        let n: usize = digits.parse().expect("ascii digits");
        number_words(n).join(" ")
    } else {
        digits
            .bytes()
            .map(|b| ONES[(b - b'0') as usize])
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn number_words(n: usize) -> Vec<&'static str> {
    debug_assert!(n < 10_000);
    if n < 20 {
        return vec![ONES[n]];
    }
    let mut words = Vec::new();
    let mut rest = n;
    if rest >= 1000 {
        words.push(ONES[rest / 1000]);
        words.push("thousand");
        rest %= 1000;
    }
    if rest >= 100 {
        words.push(ONES[rest / 100]);
        words.push("hundred");
        rest %= 100;
    }
    if rest >= 20 {
        words.push(TENS[rest / 10]);
        rest %= 10;
        if rest > 0 {
            words.push(ONES[rest]);
        }
    } else if rest > 0 {
        words.push(ONES[rest]);
    }
    words
}

/// Apostrophes are deleted so unlisted contractions collapse ("y'know" ->
/// "yknow"); every other character outside `a-z` becomes a separator.
fn strip_punctuation(text: &str) -> String {
    text.chars()
        .filter(|c| *c != '\'')
        .map(|c| if c.is_ascii_lowercase() { c } else { ' ' })
        .collect()
}
