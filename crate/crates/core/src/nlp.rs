//! Tokenization, Snowball stemming and lexicon-based entity tagging.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?|\p{L}+").unwrap());
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+)?$").unwrap());
static STEMMER: LazyLock<Stemmer> = LazyLock::new(|| Stemmer::create(Algorithm::English));

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: String,
    pub stem: String,
    pub start: usize,
    pub end: usize,
}

pub fn is_number(token: &str) -> bool {
    NUMBER_RE.is_match(token)
}

/// Snowball English stem; numbers pass through untouched.
pub fn stem(token: &str) -> String {
    if is_number(token) {
        token.to_string()
    } else {
        STEMMER.stem(token).into_owned()
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| {
            let text = m.as_str().to_lowercase();
            let stem = stem(&text);
            Token {
                text,
                stem,
                start: m.start(),
                end: m.end(),
            }
        })
        .collect()
}

/// Lowercase tokens and their stems, split on anything that is not a letter or number.
pub fn tokenize_and_stem(text: &str) -> (Vec<String>, Vec<String>) {
    tokenize(text).into_iter().map(|t| (t.text, t.stem)).unzip()
}

/// Stems of a phrase joined by single spaces; the text the built-in embedder sees.
pub fn stem_phrase(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.stem)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    CoreConcept,
    Location,
    Modifier,
    Number,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    /// Byte span within the sentence text.
    pub start: usize,
    pub end: usize,
    pub text: String,
    /// Token range `[token_start, token_end)`.
    pub token_start: usize,
    pub token_end: usize,
}

/// Everything in the shipped lexicon file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub location: Vec<String>,
    pub modifier: Vec<String>,
    pub core_concept: Vec<String>,
    pub unit: Vec<String>,
    #[serde(default)]
    pub unit_aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub negation_triggers: Vec<String>,
    #[serde(default)]
    pub disjunction_connectors: Vec<String>,
    #[serde(default)]
    pub stopwords: Vec<String>,
    #[serde(default)]
    pub abbreviations: Vec<String>,
    #[serde(default)]
    pub sections: BTreeMap<String, String>,
    #[serde(default)]
    pub extract_sections: Vec<String>,
}

impl LexiconFile {
    pub fn shipped() -> Self {
        serde_json::from_str(crate::data::LEXICONS).expect("shipped lexicons parse")
    }
}

/// Phrase matcher over stem sequences, longest match first.
#[derive(Debug, Clone, Default)]
pub struct PhraseSet {
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl PhraseSet {
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Self {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for t in terms {
            let stems: Vec<String> = tokenize(t.as_ref()).into_iter().map(|t| t.stem).collect();
            if let Some(first) = stems.first() {
                let list = by_first.entry(first.clone()).or_default();
                if !list.contains(&stems) {
                    list.push(stems);
                }
            }
        }
        for list in by_first.values_mut() {
            list.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        PhraseSet { by_first }
    }

    /// Length in tokens of the longest phrase starting at `i`.
    pub fn match_at(&self, stems: &[&str], i: usize) -> Option<usize> {
        let cands = self.by_first.get(stems[i])?;
        cands
            .iter()
            .find(|c| c.len() <= stems.len() - i && c.iter().zip(&stems[i..]).all(|(a, b)| a == b))
            .map(Vec::len)
    }

    /// Non-overlapping longest matches as token ranges.
    pub fn find_all(&self, stems: &[&str]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < stems.len() {
            match self.match_at(stems, i) {
                Some(n) => {
                    out.push((i, i + n));
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }
}

/// Lexicons for the rule-based tagger.
#[derive(Debug, Clone, Default)]
pub struct EntityLexicons {
    pub location: PhraseSet,
    pub modifier: PhraseSet,
    pub core_concept: PhraseSet,
    pub unit: PhraseSet,
}

impl EntityLexicons {
    pub fn from_file(f: &LexiconFile) -> Self {
        EntityLexicons {
            location: PhraseSet::new(&f.location),
            modifier: PhraseSet::new(&f.modifier),
            core_concept: PhraseSet::new(&f.core_concept),
            unit: PhraseSet::new(&f.unit),
        }
    }

    pub fn shipped() -> Self {
        Self::from_file(&LexiconFile::shipped())
    }

    /// Tag entities in `text` given its tokens. Units only count right after a number.
    pub fn tag(&self, text: &str, tokens: &[Token]) -> Vec<Entity> {
        let stems: Vec<&str> = tokens.iter().map(|t| t.stem.as_str()).collect();
        let mut out = Vec::new();
        let span = |kind, a: usize, b: usize| Entity {
            kind,
            start: tokens[a].start,
            end: tokens[b - 1].end,
            text: text[tokens[a].start..tokens[b - 1].end].to_string(),
            token_start: a,
            token_end: b,
        };
        for (kind, set) in [
            (EntityKind::CoreConcept, &self.core_concept),
            (EntityKind::Location, &self.location),
            (EntityKind::Modifier, &self.modifier),
        ] {
            for (a, b) in set.find_all(&stems) {
                out.push(span(kind, a, b));
            }
        }
        let mut i = 0;
        while i < tokens.len() {
            if is_number(&tokens[i].text) {
                out.push(span(EntityKind::Number, i, i + 1));
                if i + 1 < tokens.len() {
                    if let Some(n) = self.unit.match_at(&stems, i + 1) {
                        out.push(span(EntityKind::Unit, i + 1, i + 1 + n));
                        i += 1 + n;
                        continue;
                    }
                }
            }
            i += 1;
        }
        out.sort_by_key(|e| (e.start, e.kind));
        out
    }
}
