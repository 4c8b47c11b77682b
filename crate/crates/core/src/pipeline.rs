//! End-to-end extraction: parse, retrieve candidate classes, map values, standardize.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augmented_corpus, AugmentError, TemplateSet};
use crate::embedding::{embed, BuiltinEmbedder, EmbeddingBackend, EmbeddingError};
use crate::mapper::{standardize, CdeAssignment, FeatureExtraction, MapperConfig, MappingError, StandardizeError, ValueMapper};
use crate::nlp::LexiconFile;
use crate::parser::{ParseError, ParsedReport, ParserConfig, ReportParser, SentenceUnit};
use crate::record::{codes, Diagnostic};
use crate::registry::{AnnotatedExample, Registry};
use crate::retrieval::{resolve_collisions, Bm25Params, CandidateSet, RetrievalError, Retriever};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Standardize(#[from] StandardizeError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Semantic threshold for class selection and exemplar copying.
    pub threshold: f64,
    pub bm25: Bm25Params,
    pub mapper: MapperConfig,
    /// Add template sentences for uncovered values to the exemplar corpus.
    pub augment: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: 0.9,
            bm25: Bm25Params::default(),
            mapper: MapperConfig::default(),
            augment: true,
        }
    }
}

/// Everything one report produced, including intermediate retrieval state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub report_id: String,
    pub sentences: Vec<String>,
    pub candidates: Vec<CandidateSet>,
    /// class_id -> index of the sentence that won it.
    pub class_sources: BTreeMap<String, usize>,
    /// One per registry feature, in CDE order.
    pub extractions: Vec<FeatureExtraction>,
    /// One per registry CDE, in registry order.
    pub assignments: Vec<CdeAssignment>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ExtractionResult {
    pub fn assignment(&self, cde_id: &str) -> Option<&CdeAssignment> {
        self.assignments.iter().find(|a| a.cde_id == cde_id)
    }

    pub fn extraction(&self, feature: &str) -> Option<&FeatureExtraction> {
        self.extractions.iter().find(|e| e.feature_name == feature)
    }
}

pub struct Pipeline {
    registry: Arc<Registry>,
    corpus: Vec<AnnotatedExample>,
    backend: Arc<dyn EmbeddingBackend>,
    parser: ReportParser,
    retriever: Retriever,
    mapper: ValueMapper,
    config: PipelineConfig,
}

/// The exemplar corpus a registry yields under a config.
pub fn build_corpus(registry: &Registry, templates: &TemplateSet, augment: bool) -> Result<Vec<AnnotatedExample>, AugmentError> {
    if augment {
        augmented_corpus(registry, templates)
    } else {
        Ok(registry.exemplars().to_vec())
    }
}

/// Built-in embedder fitted on the corpus sentences.
pub fn fit_builtin(corpus: &[AnnotatedExample]) -> BuiltinEmbedder {
    BuiltinEmbedder::fit(corpus.iter().map(|e| e.sentence.as_str()))
}

impl Pipeline {
    /// Shipped lexicons and templates with the built-in embedder.
    pub fn builtin(registry: Registry, config: PipelineConfig) -> Result<Self, PipelineError> {
        let corpus = build_corpus(&registry, &TemplateSet::shipped(), config.augment)?;
        let backend = Arc::new(fit_builtin(&corpus));
        Self::with_parts(Arc::new(registry), corpus, backend, &LexiconFile::shipped(), config)
    }

    /// Shipped lexicons and templates with a caller-provided backend.
    pub fn with_backend(
        registry: Registry,
        backend: Arc<dyn EmbeddingBackend>,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        let corpus = build_corpus(&registry, &TemplateSet::shipped(), config.augment)?;
        Self::with_parts(Arc::new(registry), corpus, backend, &LexiconFile::shipped(), config)
    }

    pub fn with_parts(
        registry: Arc<Registry>,
        corpus: Vec<AnnotatedExample>,
        backend: Arc<dyn EmbeddingBackend>,
        lexicons: &LexiconFile,
        mut config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.mapper.threshold = config.threshold;
        let parser = ReportParser::new(ParserConfig::from_lexicons(lexicons), crate::nlp::EntityLexicons::from_file(lexicons));
        let retriever = Retriever::new(&registry, &corpus, backend.as_ref(), config.bm25, &lexicons.stopwords)?;
        let mapper = ValueMapper::new(&registry, &corpus, backend.as_ref(), &parser.lexicons, config.mapper.clone())?;
        Ok(Pipeline { registry, corpus, backend, parser, retriever, mapper, config })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn corpus(&self) -> &[AnnotatedExample] {
        &self.corpus
    }

    pub fn backend(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn backend_arc(&self) -> Arc<dyn EmbeddingBackend> {
        self.backend.clone()
    }

    pub fn parser(&self) -> &ReportParser {
        &self.parser
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn mapper(&self) -> &ValueMapper {
        &self.mapper
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn parse(&self, report_id: &str, raw: &str) -> Result<ParsedReport, PipelineError> {
        Ok(self.parser.parse(report_id, raw)?)
    }

    pub fn extract(&self, report_id: &str, raw: &str) -> Result<ExtractionResult, PipelineError> {
        let parsed = self.parse(report_id, raw)?;
        self.extract_parsed(&parsed)
    }

    /// Treat `text` as the whole findings section of a one-sentence report.
    pub fn extract_sentence(&self, report_id: &str, text: &str) -> Result<ExtractionResult, PipelineError> {
        let unit = SentenceUnit::from_text(text, &self.parser.lexicons);
        let parsed = ParsedReport {
            report_id: report_id.to_string(),
            raw: text.to_string(),
            sections: vec![],
            sentences: vec![unit],
            diagnostics: vec![],
        };
        self.extract_parsed(&parsed)
    }

    pub fn extract_parsed(&self, parsed: &ParsedReport) -> Result<ExtractionResult, PipelineError> {
        let registry = self.registry.as_ref();
        let mut diagnostics: Vec<Diagnostic> = parsed
            .diagnostics
            .iter()
            .map(|d| Diagnostic::new(if parsed.sentences.is_empty() { codes::NO_SECTIONS } else { codes::PARSER }, d.clone()))
            .collect();

        let usable: Vec<&SentenceUnit> = parsed.sentences.iter().filter(|s| !s.stems.is_empty()).collect();
        for s in parsed.sentences.iter().filter(|s| s.stems.is_empty()) {
            diagnostics.push(Diagnostic::new(codes::EMPTY_SENTENCE, "sentence has no tokens; skipped").sentence(s.index));
        }
        let texts: Vec<&str> = usable.iter().map(|s| s.text.as_str()).collect();
        let vectors = if texts.is_empty() { vec![] } else { embed(self.backend.as_ref(), &texts)? };

        let mut candidates = Vec::with_capacity(usable.len());
        for (s, v) in usable.iter().zip(&vectors) {
            candidates.push(self.retriever.select_candidates(s, v, self.config.threshold)?);
        }
        let class_sources = resolve_collisions(&candidates);

        let mut by_feature: BTreeMap<String, FeatureExtraction> = BTreeMap::new();
        let mut won: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (class, c) in registry.classes().iter().enumerate() {
            let Some(&sref) = class_sources.get(&c.class_id) else { continue };
            let pos = usable.iter().position(|s| s.index == sref).expect("winning sentence is usable");
            let score = candidates[pos].get(&c.class_id).map_or(0.0, |k| k.semantic_score);
            let (found, diags) = self.mapper.map_class(
                registry,
                &self.retriever,
                self.backend.as_ref(),
                usable[pos],
                &vectors[pos],
                class,
                score,
            )?;
            for e in found {
                by_feature.insert(e.feature_name.clone(), e);
            }
            diagnostics.extend(diags);
            won.entry(pos).or_default().push(class);
        }
        for (pos, classes) in &won {
            self.mapper.apply_rules(registry, usable[*pos], classes, &mut by_feature, &mut diagnostics);
        }

        let extractions: Vec<FeatureExtraction> = registry
            .cdes()
            .iter()
            .filter_map(|cde| {
                let f = registry.feature_for_cde(&cde.cde_id)?;
                Some(by_feature.remove(f).unwrap_or_else(|| FeatureExtraction::default_for(f, cde)))
            })
            .collect();
        let assignments = standardize(&extractions, registry)?;
        Ok(ExtractionResult {
            report_id: parsed.report_id.clone(),
            sentences: parsed.sentences.iter().map(|s| s.text.clone()).collect(),
            candidates,
            class_sources,
            extractions,
            assignments,
            diagnostics,
        })
    }
}
