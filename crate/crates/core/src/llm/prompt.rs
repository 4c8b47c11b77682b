//! Dynamic few-shot prompt construction.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::embedding::{cosine, embed, EmbeddingBackend, EmbeddingVector};
use crate::parser::ParsedReport;
use crate::registry::{AnnotatedExample, CdeKind, Registry};

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_TOKEN_BUDGET: usize = 8000;
pub const DEFAULT_CHARS_PER_TOKEN: f64 = 4.0;

const SYSTEM_INSTRUCTION: &str = "You are a radiology assistant and will be given a chest radiograph report. \
Extract the features listed below and answer in key:value format, one pair per line. \
For pulmonary nodules give only the size in mm of the largest nodule. \
Use absent only when the report states that a finding is absent; otherwise use unspecified.";

const FEATURE_HEADER: &str = "The keys and their value sets are:";
const FEWSHOT_HEADER: &str = "For sentences in report that are in following list, use the key,value pairs from list. \
If a sentence is not in the list, work out its values yourself:";
const REPORT_HEADER: &str = "Report:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Fewshot,
    Zeroshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    /// Minimum cosine between a report sentence and a corpus sentence.
    pub threshold: f64,
    pub token_budget: usize,
    pub chars_per_token: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Fewshot,
            threshold: DEFAULT_THRESHOLD,
            token_budget: DEFAULT_TOKEN_BUDGET,
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
        }
    }
}

/// One in-context example: a corpus sentence and its annotations keyed by prompt key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPair {
    pub sentence: String,
    /// (prompt key, value) in registry order.
    pub values: Vec<(String, String)>,
    pub similarity: f64,
    /// Index into the few-shot corpus.
    pub exemplar: usize,
    /// Report sentence that selected it.
    pub report_sentence: usize,
}

impl FewShotPair {
    fn render(&self) -> String {
        let kv: Vec<String> = self.values.iter().map(|(k, v)| format!("'{k}': '{v}'")).collect();
        format!("\"{};{{{}}}\"", self.sentence, kv.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub feature_block: String,
    pub fewshot_block: Vec<FewShotPair>,
    pub report_text: String,
    pub token_estimate: usize,
}

impl PromptBundle {
    /// The exact text sent to the model.
    pub fn text(&self) -> String {
        render(&self.system_instruction, &self.feature_block, &self.fewshot_block, &self.report_text)
    }
}

fn render(instruction: &str, features: &str, pairs: &[FewShotPair], report: &str) -> String {
    let mut out = String::new();
    writeln!(out, "{instruction}").unwrap();
    writeln!(out, "{FEATURE_HEADER}").unwrap();
    writeln!(out, "{features}").unwrap();
    writeln!(out, "{FEWSHOT_HEADER} [").unwrap();
    let lines: Vec<String> = pairs.iter().map(FewShotPair::render).collect();
    if !lines.is_empty() {
        writeln!(out, "{}", lines.join(",\n")).unwrap();
    }
    writeln!(out, "]").unwrap();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    writeln!(out, "{report}").unwrap();
    out
}

pub fn estimate_tokens(text: &str, chars_per_token: f64) -> usize {
    (text.chars().count() as f64 / chars_per_token.max(f64::MIN_POSITIVE)).ceil() as usize
}

/// One line per feature in CDE order: `prompt_key: ['v1', 'v2', ...]`.
pub fn feature_block(registry: &Registry) -> String {
    let mut lines = Vec::new();
    for cde in registry.cdes() {
        let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
        let key = registry.binding(feature).map_or(feature, |b| b.prompt_key());
        let values: Vec<String> = match cde.kind {
            CdeKind::Categorical => cde.value_set.iter().map(|v| format!("'{}'", v.label)).collect(),
            CdeKind::Numeric => vec![format!("'number in {}'", cde.canonical_unit()), "'unspecified'".into()],
        };
        lines.push(format!("{key}: [{}]", values.join(", ")));
    }
    lines.join("\n")
}

/// Corpus sentences with precomputed vectors for few-shot selection.
pub struct FewShotIndex {
    corpus: Vec<AnnotatedExample>,
    vectors: Vec<EmbeddingVector>,
}

impl FewShotIndex {
    pub fn new(corpus: Vec<AnnotatedExample>, backend: &dyn EmbeddingBackend) -> Result<Self, LlmError> {
        let texts: Vec<&str> = corpus.iter().map(|e| e.sentence.as_str()).collect();
        let vectors = embed(backend, &texts)?;
        Ok(FewShotIndex { corpus, vectors })
    }

    pub fn corpus(&self) -> &[AnnotatedExample] {
        &self.corpus
    }

    /// Corpus entries with cosine >= threshold, similarity descending, corpus order on ties.
    pub fn matches(&self, query: &EmbeddingVector, threshold: f64) -> Result<Vec<(usize, f64)>, LlmError> {
        let mut out = Vec::new();
        for (i, v) in self.vectors.iter().enumerate() {
            let s = cosine(query, v)?;
            if s >= threshold {
                out.push((i, s));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }
}

fn pair_values(registry: &Registry, ex: &AnnotatedExample) -> Vec<(String, String)> {
    let mut out: Vec<(usize, String, String)> = ex
        .feature_values
        .iter()
        .filter_map(|(f, v)| {
            let feature = registry.canonical_feature(f)?;
            let cde = registry.lookup_feature(feature).ok()?;
            let order = registry.cdes().iter().position(|c| c.cde_id == cde.cde_id)?;
            let key = registry.binding(feature).map_or(feature, |b| b.prompt_key());
            Some((order, key.to_string(), v.clone()))
        })
        .collect();
    out.sort();
    out.into_iter().map(|(_, k, v)| (k, v)).collect()
}

/// Build the prompt for one report.
///
/// Each report sentence contributes its corpus matches in similarity order; an
/// exemplar already selected by an earlier sentence is not repeated. Pairs are
/// appended until the next one would push the estimate over the budget.
pub fn build_fewshot_prompt(
    report: &ParsedReport,
    registry: &Registry,
    index: &FewShotIndex,
    backend: &dyn EmbeddingBackend,
    config: &PromptConfig,
) -> Result<PromptBundle, LlmError> {
    let system_instruction = SYSTEM_INSTRUCTION.to_string();
    let features = feature_block(registry);
    let report_text = report.raw.trim().to_string();
    let base = estimate_tokens(&render(&system_instruction, &features, &[], &report_text), config.chars_per_token);
    if base > config.token_budget {
        return Err(LlmError::Budget { needed: base, budget: config.token_budget });
    }

    let mut pairs: Vec<FewShotPair> = Vec::new();
    if config.mode == PromptMode::Fewshot {
        let sentences: Vec<_> = report.sentences.iter().filter(|s| !s.stems.is_empty()).collect();
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let vectors = embed(backend, &texts)?;
        let mut seen = HashSet::new();
        'outer: for (s, v) in sentences.iter().zip(&vectors) {
            for (i, sim) in index.matches(v, config.threshold)? {
                if !seen.insert(i) {
                    continue;
                }
                let ex = &index.corpus[i];
                pairs.push(FewShotPair {
                    sentence: ex.sentence.clone(),
                    values: pair_values(registry, ex),
                    similarity: sim,
                    exemplar: i,
                    report_sentence: s.index,
                });
                let est = estimate_tokens(&render(&system_instruction, &features, &pairs, &report_text), config.chars_per_token);
                if est > config.token_budget {
                    pairs.pop();
                    break 'outer;
                }
            }
        }
    }

    let token_estimate = estimate_tokens(&render(&system_instruction, &features, &pairs, &report_text), config.chars_per_token);
    Ok(PromptBundle {
        system_instruction,
        feature_block: features,
        fewshot_block: pairs,
        report_text,
        token_estimate,
    })
}
