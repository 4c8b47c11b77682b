//! LLM baseline: few-shot prompting, response parsing and embedding standardization.

mod client;
mod prompt;
mod response;
mod standardize;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{prompt_hash, LlmClient, RemoteLlm, RemoteLlmConfig, ReplayClient};
pub use prompt::{
    build_fewshot_prompt, estimate_tokens, feature_block, FewShotIndex, FewShotPair, PromptBundle, PromptConfig,
    PromptMode, DEFAULT_CHARS_PER_TOKEN, DEFAULT_THRESHOLD, DEFAULT_TOKEN_BUDGET,
};
pub use response::{parse_response, LlmResponse, UnparsedLine, UnparsedReason};
pub use standardize::{cde_text, embed_standardize, query_text, standardize_by_embedding, CdeIndex, StandardizedValue};

use crate::augment::{AugmentError, TemplateSet};
use crate::embedding::{EmbeddingBackend, EmbeddingError, SimilarityError};
use crate::mapper::{CdeAssignment, FeatureExtraction};
use crate::parser::{ParseError, ReportParser};
use crate::pipeline::{build_corpus, fit_builtin};
use crate::record::Diagnostic;
use crate::registry::{AnnotatedExample, ExampleSource, Registry};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt needs {needed} tokens before any example but the budget is {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("LLM request failed (status {status:?}): {message}")]
    Client { status: Option<u16>, message: String },
    #[error("LLM protocol error: {0}")]
    Protocol(String),
    #[error("no replay entry for prompt {hash}")]
    ReplayMiss { hash: String },
    #[error("replay file is not a JSON string map: {0}")]
    ReplayFormat(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registry has no CDEs")]
    EmptyRegistry,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// One report through the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResult {
    pub report_id: String,
    pub prompt_hash: String,
    pub fewshot_count: usize,
    pub token_estimate: usize,
    pub response: LlmResponse,
    /// One per registry feature, in CDE order.
    pub extractions: Vec<FeatureExtraction>,
    /// One per registry CDE, in registry order.
    pub assignments: Vec<CdeAssignment>,
    pub standardization: Vec<StandardizedValue>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Human exemplars only; augmented sentences are not shown to the model.
pub fn human_corpus(registry: &Registry) -> Vec<AnnotatedExample> {
    registry.exemplars().iter().filter(|e| e.source == ExampleSource::Human).cloned().collect()
}

pub struct LlmBaseline {
    registry: Arc<Registry>,
    parser: ReportParser,
    backend: Arc<dyn EmbeddingBackend>,
    fewshot: FewShotIndex,
    cde_index: CdeIndex,
    config: PromptConfig,
}

impl LlmBaseline {
    /// Built-in embedder fitted the same way as the extraction pipeline's.
    pub fn builtin(registry: Registry, config: PromptConfig) -> Result<Self, LlmError> {
        let corpus = build_corpus(&registry, &TemplateSet::shipped(), true)?;
        let backend = Arc::new(fit_builtin(&corpus));
        Self::with_parts(Arc::new(registry), backend, ReportParser::default(), config)
    }

    pub fn with_parts(
        registry: Arc<Registry>,
        backend: Arc<dyn EmbeddingBackend>,
        parser: ReportParser,
        config: PromptConfig,
    ) -> Result<Self, LlmError> {
        let fewshot = FewShotIndex::new(human_corpus(&registry), backend.as_ref())?;
        let cde_index = CdeIndex::build(&registry, backend.as_ref())?;
        Ok(LlmBaseline { registry, parser, backend, fewshot, cde_index, config })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn backend(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn cde_index(&self) -> &CdeIndex {
        &self.cde_index
    }

    pub fn prompt(&self, report_id: &str, raw: &str) -> Result<PromptBundle, LlmError> {
        let parsed = self.parser.parse(report_id, raw)?;
        build_fewshot_prompt(&parsed, &self.registry, &self.fewshot, self.backend.as_ref(), &self.config)
    }

    pub fn run(&self, client: &dyn LlmClient, report_id: &str, raw: &str) -> Result<LlmResult, LlmError> {
        let bundle = self.prompt(report_id, raw)?;
        let text = bundle.text();
        let reply = client.complete(&text)?;
        let response = parse_response(&reply, &self.registry);
        let (extractions, mut diagnostics) = response.extractions(&self.registry);
        let (assignments, standardization, diags) =
            standardize_by_embedding(&extractions, &self.registry, self.backend.as_ref(), &self.cde_index)?;
        diagnostics.extend(diags);
        Ok(LlmResult {
            report_id: report_id.to_string(),
            prompt_hash: prompt_hash(&text),
            fewshot_count: bundle.fewshot_block.len(),
            token_estimate: bundle.token_estimate,
            response,
            extractions,
            assignments,
            standardization,
            diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NORMAL_REPORT;

    #[test]
    fn replay_round_trip() {
        let b = LlmBaseline::builtin(Registry::chest_xr(), PromptConfig::default()).unwrap();
        let prompt = b.prompt("normal", NORMAL_REPORT).unwrap().text();
        let client = ReplayClient::from_prompts([(prompt, "Cardiomegaly_Cardiomegaly: absent\nsomething odd\nPresence_Pneumothorax: maybe")]);
        let out = b.run(&client, "normal", NORMAL_REPORT).unwrap();
        assert_eq!(out.extractions.len(), 44);
        assert_eq!(out.assignments.len(), 44);
        assert_eq!(out.response.unparsed_lines.len(), 2);
        assert_eq!(out.response.diagnostics().len(), 2);
        assert_eq!(out.assignments.iter().find(|a| a.cde_id == "RDE430").unwrap().value.code(), Some("RDE430.3"));
        let miss = b.run(&client, "x", "FINDINGS: Heart is enlarged.");
        assert!(matches!(miss, Err(LlmError::ReplayMiss { .. })));
    }
}
