//! Report sectioning, sentence segmentation and inline header stripping.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlp::{self, Entity, EntityLexicons, LexiconFile};

static SECTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Z][A-Z]*(?:[ /&][A-Z]+)*[ \t]*:").unwrap());
static INLINE_HEADER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Z][A-Z]+(?:[ /&-][A-Za-z]+){0,3})[ \t]*:\s*").unwrap());
static LIST_MARKER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{1,2}[.)]\s+").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("report {0:?} is empty")]
    EmptyReport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// Canonical section name, e.g. "findings".
    pub name: String,
    /// Header as written, without the colon.
    pub header: String,
    /// Byte span of the body in the raw report.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub index: usize,
    pub section: String,
    /// Span of the whole sentence (header included) in the raw report.
    pub span: (usize, usize),
    /// Span of `text` in the raw report.
    pub text_span: (usize, usize),
    pub header: Option<String>,
    pub text: String,
    pub tokens: Vec<String>,
    pub stems: Vec<String>,
    /// Byte span of each token within `text`.
    pub token_spans: Vec<(usize, usize)>,
    pub entities: Vec<Entity>,
}

impl SentenceUnit {
    /// Build a unit from free text, outside any report.
    pub fn from_text(text: &str, lexicons: &EntityLexicons) -> Self {
        let text = text.trim();
        let mut unit = SentenceUnit {
            index: 0,
            section: String::new(),
            span: (0, text.len()),
            text_span: (0, text.len()),
            header: None,
            text: text.to_string(),
            tokens: vec![],
            stems: vec![],
            token_spans: vec![],
            entities: vec![],
        };
        tag_entities(&mut unit, lexicons);
        unit
    }

    pub fn entities_of(&self, kind: nlp::EntityKind) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }
}

/// Tokenize, stem and tag a unit in place.
pub fn tag_entities(unit: &mut SentenceUnit, lexicons: &EntityLexicons) {
    let toks = nlp::tokenize(&unit.text);
    unit.entities = lexicons.tag(&unit.text, &toks);
    unit.token_spans = toks.iter().map(|t| (t.start, t.end)).collect();
    (unit.tokens, unit.stems) = toks.into_iter().map(|t| (t.text, t.stem)).unzip();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedReport {
    pub report_id: String,
    pub raw: String,
    pub sections: Vec<Section>,
    pub sentences: Vec<SentenceUnit>,
    pub diagnostics: Vec<String>,
}

impl ParsedReport {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ParserConfig {
    /// Uppercase header → canonical section name.
    pub sections: BTreeMap<String, String>,
    pub extract_sections: Vec<String>,
    pub abbreviations: Vec<String>,
}

impl ParserConfig {
    pub fn from_lexicons(f: &LexiconFile) -> Self {
        ParserConfig {
            sections: f.sections.clone(),
            extract_sections: f.extract_sections.clone(),
            abbreviations: f.abbreviations.iter().map(|a| a.to_lowercase()).collect(),
        }
    }
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self::from_lexicons(&LexiconFile::shipped())
    }
}

#[derive(Debug, Clone)]
pub struct ReportParser {
    pub config: ParserConfig,
    pub lexicons: EntityLexicons,
}

impl Default for ReportParser {
    fn default() -> Self {
        let f = LexiconFile::shipped();
        ReportParser {
            config: ParserConfig::from_lexicons(&f),
            lexicons: EntityLexicons::from_file(&f),
        }
    }
}

impl ReportParser {
    pub fn new(config: ParserConfig, lexicons: EntityLexicons) -> Self {
        ReportParser { config, lexicons }
    }

    pub fn parse(&self, report_id: &str, raw: &str) -> Result<ParsedReport, ParseError> {
        if raw.trim().is_empty() {
            return Err(ParseError::EmptyReport(report_id.to_string()));
        }
        let sections = self.sections(raw);
        let mut sentences = Vec::new();
        for sec in sections
            .iter()
            .filter(|s| self.config.extract_sections.contains(&s.name))
        {
            for (a, b) in self.segment(raw, sec.start, sec.end) {
                let mut unit = build_unit(raw, &sec.name, a, b);
                unit.index = sentences.len();
                tag_entities(&mut unit, &self.lexicons);
                sentences.push(unit);
            }
        }
        let mut diagnostics = Vec::new();
        if !sections
            .iter()
            .any(|s| self.config.extract_sections.contains(&s.name))
        {
            diagnostics.push(format!(
                "no {} section found",
                self.config.extract_sections.join("/")
            ));
        }
        Ok(ParsedReport {
            report_id: report_id.to_string(),
            raw: raw.to_string(),
            sections,
            sentences,
            diagnostics,
        })
    }

    /// Known section headers in document order; a body runs to the next header.
    pub fn sections(&self, raw: &str) -> Vec<Section> {
        let mut heads: Vec<(usize, usize, String, String)> = Vec::new();
        for m in SECTION_RE.find_iter(raw) {
            let name = m.as_str().trim_end_matches(':').trim_end();
            // try the longest known suffix, so "CHEST FINDINGS:" still opens findings
            let words: Vec<&str> = name.split(' ').collect();
            for k in 0..words.len() {
                let cand = words[k..].join(" ");
                if let Some(canon) = self.config.sections.get(&cand) {
                    let start = m.start() + name.len() - cand.len();
                    let at_boundary = raw[..start]
                        .chars()
                        .next_back()
                        .is_none_or(char::is_whitespace);
                    if at_boundary {
                        heads.push((start, m.end(), cand, canon.clone()));
                    }
                    break;
                }
            }
        }
        let mut out = Vec::new();
        if let Some(first) = heads.first() {
            let pre = &raw[..first.0];
            if !pre.trim().is_empty() {
                out.push(Section {
                    name: "preamble".into(),
                    header: String::new(),
                    start: 0,
                    end: first.0,
                    text: pre.to_string(),
                });
            }
        }
        for (i, (_, body_start, header, canon)) in heads.iter().enumerate() {
            let end = heads.get(i + 1).map_or(raw.len(), |h| h.0);
            out.push(Section {
                name: canon.clone(),
                header: header.clone(),
                start: *body_start,
                end,
                text: raw[*body_start..end].to_string(),
            });
        }
        out
    }

    /// Sentence spans (trimmed) inside `raw[start..end]`.
    pub fn segment(&self, raw: &str, start: usize, end: usize) -> Vec<(usize, usize)> {
        let body = &raw[start..end];
        let bytes = body.as_bytes();
        let mut out = Vec::new();
        let mut cur = 0usize;
        for (i, c) in body.char_indices() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let next = i + 1;
            if next < bytes.len() && !bytes[next].is_ascii_whitespace() {
                continue;
            }
            let rest = body[next..].trim_start();
            if !rest.is_empty() && !starts_sentence(rest) {
                continue;
            }
            if c == '.' && self.is_abbreviation(&body[cur..i]) {
                continue;
            }
            if c == '.' && is_list_marker(&body[cur..i]) {
                continue;
            }
            push_trimmed(&mut out, body, start, cur, next);
            cur = next;
        }
        push_trimmed(&mut out, body, start, cur, body.len());
        out
    }

    fn is_abbreviation(&self, before: &str) -> bool {
        let word: String = before
            .chars()
            .rev()
            .take_while(|c| c.is_alphanumeric() || *c == '.')
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        !word.is_empty() && self.config.abbreviations.contains(&word.to_lowercase())
    }
}

fn starts_sentence(rest: &str) -> bool {
    let first = rest.chars().next().unwrap();
    first.is_uppercase() || LIST_MARKER_RE.is_match(rest)
}

fn is_list_marker(piece: &str) -> bool {
    let p = piece.trim();
    !p.is_empty() && p.len() <= 2 && p.chars().all(|c| c.is_ascii_digit())
}

fn push_trimmed(out: &mut Vec<(usize, usize)>, body: &str, base: usize, a: usize, b: usize) {
    let piece = &body[a..b];
    let lead = piece.len() - piece.trim_start().len();
    let trail = piece.len() - piece.trim_end().len();
    if lead + trail < piece.len() {
        out.push((base + a + lead, base + b - trail));
    }
}

fn build_unit(raw: &str, section: &str, a: usize, b: usize) -> SentenceUnit {
    let mut ts = a;
    let mut header = None;
    if let Some(c) = INLINE_HEADER_RE.captures(&raw[ts..b]) {
        header = Some(c[1].to_string());
        ts += c.get(0).unwrap().end();
    }
    if let Some(m) = LIST_MARKER_RE.find(&raw[ts..b]) {
        ts += m.end();
    }
    SentenceUnit {
        index: 0,
        section: section.to_string(),
        span: (a, b),
        text_span: (ts, b),
        header,
        text: raw[ts..b].to_string(),
        tokens: vec![],
        stems: vec![],
        token_spans: vec![],
        entities: vec![],
    }
}

/// Parse with the shipped configuration.
pub fn parse_report(report_id: &str, raw: &str) -> Result<ParsedReport, ParseError> {
    ReportParser::default().parse(report_id, raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NORMAL_REPORT;

    fn texts(r: &ParsedReport) -> Vec<&str> {
        r.sentences.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn worked_report() {
        let r = parse_report("normal", NORMAL_REPORT).unwrap();
        assert_eq!(r.sentences.len(), 9);
        assert_eq!(r.sentences[0].header.as_deref(), Some("DEVICES"));
        assert_eq!(r.sentences[0].text, "There are no tubes or lines present.");
        assert_eq!(r.sentences[3].header.as_deref(), Some("LUNGS/PLEURA"));
        assert_eq!(r.sentences[4].header, None);
        assert_eq!(r.sentences[7].header.as_deref(), Some("UPPER ABDOMEN"));
        assert!(r.sentences.iter().all(|s| s.section == "findings"));
    }

    #[test]
    fn single_sentence_no_header() {
        let r = parse_report("x", "FINDINGS: The lungs are clear.").unwrap();
        assert_eq!(texts(&r), ["The lungs are clear."]);
        assert_eq!(r.sentences[0].header, None);
    }

    #[test]
    fn impression_only() {
        let r = parse_report("x", "IMPRESSION: No pneumothorax.").unwrap();
        assert_eq!(texts(&r), ["No pneumothorax."]);
        assert_eq!(r.sentences[0].section, "impression");
    }

    #[test]
    fn no_sections_is_diagnosed() {
        let r = parse_report("x", "The lungs are clear.").unwrap();
        assert!(r.sentences.is_empty());
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(parse_report("x", "  \n"), Err(ParseError::EmptyReport("x".into())));
    }

    #[test]
    fn history_excluded_and_synonyms() {
        let raw = "HISTORY: Cough. FINDING: Heart size is normal. IMPRESSIONS: No acute disease.";
        let r = parse_report("x", raw).unwrap();
        assert_eq!(texts(&r), ["Heart size is normal.", "No acute disease."]);
        assert_eq!(r.sections.len(), 3);
    }

    #[test]
    fn decimals_abbreviations_and_lists() {
        let raw = "FINDINGS: A 1.2 cm nodule vs. granuloma in the RUL. Stable.\nIMPRESSION:\n1. Nodule.\n2. No effusion.";
        let r = parse_report("x", raw).unwrap();
        assert_eq!(
            texts(&r),
            ["A 1.2 cm nodule vs. granuloma in the RUL.", "Stable.", "Nodule.", "No effusion."]
        );
    }

    #[test]
    fn spans_point_into_raw() {
        let r = parse_report("normal", NORMAL_REPORT).unwrap();
        for s in &r.sentences {
            assert_eq!(&NORMAL_REPORT[s.text_span.0..s.text_span.1], s.text);
            assert!(s.span.0 <= s.text_span.0 && s.text_span.1 == s.span.1);
        }
    }
}
