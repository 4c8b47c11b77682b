//! Template sentences for (feature, value) pairs that no human exemplar covers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{AnnotatedExample, ExampleSource, Registry};

pub const SLOT: &str = "{phrase}";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("cannot read templates {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template file does not match schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("template for {feature} has no {SLOT} slot")]
    NoSlot { feature: String },
    #[error("no template phrase for uncovered pairs: {}", fmt_pairs(.0))]
    Gaps(Vec<(String, String)>),
}

fn fmt_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(f, v)| format!("{f}={v}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TemplateSpec {
    pattern: String,
    value_phrases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationTemplate {
    pub feature_name: String,
    pub pattern: String,
    /// value_code -> phrase
    pub value_phrases: BTreeMap<String, String>,
}

impl AugmentationTemplate {
    /// Generic shape for features without a dedicated template: "<label> is <value>."
    pub fn generic(registry: &Registry, feature: &str) -> Option<Self> {
        let cde = registry.lookup_feature(feature).ok()?;
        let name = registry
            .binding(feature)
            .and_then(|b| b.label.clone())
            .unwrap_or_else(|| cde.display_name.clone());
        Some(AugmentationTemplate {
            feature_name: feature.to_string(),
            pattern: format!("{name} is {SLOT}."),
            value_phrases: cde
                .value_set
                .iter()
                .map(|v| (v.value_code.clone(), v.label.clone()))
                .collect(),
        })
    }

    pub fn render(&self, value_code: &str) -> Option<String> {
        self.value_phrases
            .get(value_code)
            .map(|p| self.pattern.replace(SLOT, p))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<String, AugmentationTemplate>,
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let raw: BTreeMap<String, TemplateSpec> = serde_json::from_str(text)?;
        let mut templates = BTreeMap::new();
        for (feature, spec) in raw {
            if !spec.pattern.contains(SLOT) {
                return Err(AugmentError::NoSlot { feature });
            }
            templates.insert(
                feature.clone(),
                AugmentationTemplate {
                    feature_name: feature,
                    pattern: spec.pattern,
                    value_phrases: spec.value_phrases,
                },
            );
        }
        Ok(TemplateSet { templates })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Tube, placement and fracture templates.
    pub fn shipped() -> Self {
        Self::from_json(crate::data::TEMPLATES).expect("shipped templates are valid")
    }

    pub fn get(&self, feature: &str) -> Option<&AugmentationTemplate> {
        self.templates.get(feature)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AugmentationTemplate> {
        self.templates.values()
    }
}

/// One augmented exemplar per (feature, value label) with zero coverage.
///
/// `coverage` is keyed by (feature name, value label) as produced by
/// [`Registry::coverage`]. Output follows registry CDE order, then value-set order.
/// A value phrase rendering to a sentence already emitted is skipped.
pub fn augment(
    registry: &Registry,
    coverage: &BTreeMap<(String, String), usize>,
    templates: &TemplateSet,
) -> Result<Vec<AnnotatedExample>, AugmentError> {
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    let mut seen = HashSet::new();
    for cde in registry.cdes() {
        let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
        let template = match templates.get(feature) {
            Some(t) => t.clone(),
            None => match AugmentationTemplate::generic(registry, feature) {
                Some(t) => t,
                None => continue,
            },
        };
        for v in &cde.value_set {
            let key = (feature.to_string(), v.label.clone());
            if coverage.get(&key).copied().unwrap_or(0) > 0 {
                continue;
            }
            match template.render(&v.value_code) {
                Some(sentence) => {
                    if seen.insert(sentence.clone()) {
                        out.push(AnnotatedExample {
                            sentence,
                            feature_values: BTreeMap::from([key]),
                            source: ExampleSource::Augmented,
                        });
                    }
                }
                None => gaps.push(key),
            }
        }
    }
    if gaps.is_empty() {
        Ok(out)
    } else {
        Err(AugmentError::Gaps(gaps))
    }
}

/// Human exemplars followed by the augmentation they need.
pub fn augmented_corpus(registry: &Registry, templates: &TemplateSet) -> Result<Vec<AnnotatedExample>, AugmentError> {
    let human: Vec<AnnotatedExample> = registry
        .exemplars()
        .iter()
        .filter(|e| e.source == ExampleSource::Human)
        .cloned()
        .collect();
    let coverage = registry.coverage(&human);
    let mut corpus = human;
    corpus.extend(augment(registry, &coverage, templates)?);
    Ok(corpus)
}

/// (feature, value label) pairs with no exemplar at all in `corpus`.
pub fn uncovered_pairs(registry: &Registry, corpus: &[AnnotatedExample]) -> BTreeSet<(String, String)> {
    let mut all: BTreeSet<(String, String)> = registry.coverage(&[]).into_keys().collect();
    for ex in corpus {
        for (f, v) in &ex.feature_values {
            let Some(feature) = registry.canonical_feature(f) else { continue };
            let Ok(cde) = registry.lookup_feature(feature) else { continue };
            if let Some(val) = cde.value_by_label(v) {
                all.remove(&(feature.to_string(), val.label.clone()));
            }
        }
    }
    all
}
