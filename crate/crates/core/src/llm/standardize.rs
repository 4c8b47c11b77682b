//! Embedding-based mapping of free feature:value pairs onto registry CDEs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::embedding::{cosine, embed, embed_one, EmbeddingBackend, EmbeddingVector};
use crate::mapper::{split_number, AssignedValue, CdeAssignment, ExtractedValue, FeatureExtraction};
use crate::record::{codes, Diagnostic};
use crate::registry::{CdeDefinition, CdeKind, Registry};
use crate::units::{convert_unit, validate_bounds, BoundsCheck};

/// Text describing a CDE: name, description, value labels and set name.
pub fn cde_text(cde: &CdeDefinition) -> String {
    let values: Vec<&str> = cde.value_set.iter().map(|v| v.label.as_str()).collect();
    let mut text = format!("{}. {}", cde.display_name, cde.description.trim());
    if !values.is_empty() {
        text.push_str(&format!(" Values: {}.", values.join(", ")));
    }
    if let Some(u) = &cde.unit {
        text.push_str(&format!(" Unit: {u}."));
    }
    text.push_str(&format!(" Set: {}.", cde.cde_set_name));
    text
}

/// Query text for a feature:value pair.
pub fn query_text(feature_name: &str, value: &str) -> String {
    format!("{} {}", feature_name.replace('_', " "), value.trim())
}

/// Precomputed vectors for every CDE text and every value label.
pub struct CdeIndex {
    cde_ids: Vec<String>,
    cde_vectors: Vec<EmbeddingVector>,
    value_vectors: Vec<Vec<EmbeddingVector>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedValue {
    pub feature_name: String,
    pub value: String,
    pub assignment: CdeAssignment,
    pub cde_similarity: f64,
    /// None for numeric CDEs.
    pub value_similarity: Option<f64>,
    /// (cde_id, cosine) for every registry CDE, in registry order.
    pub cde_scores: Vec<(String, f64)>,
}

impl CdeIndex {
    pub fn build(registry: &Registry, backend: &dyn EmbeddingBackend) -> Result<Self, LlmError> {
        let texts: Vec<String> = registry.cdes().iter().map(cde_text).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let cde_vectors = embed(backend, &refs)?;
        let mut value_vectors = Vec::new();
        for cde in registry.cdes() {
            let labels: Vec<&str> = cde.value_set.iter().map(|v| v.label.as_str()).collect();
            value_vectors.push(embed(backend, &labels)?);
        }
        Ok(CdeIndex {
            cde_ids: registry.cdes().iter().map(|c| c.cde_id.clone()).collect(),
            cde_vectors,
            value_vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.cde_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cde_ids.is_empty()
    }
}

fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Pick the CDE whose text is closest to the pair, then the closest value label within it.
///
/// Numeric CDEs take the number from the value string; a value that does not
/// parse, convert or fit the bounds yields the CDE default.
pub fn embed_standardize(
    feature_name: &str,
    value: &str,
    registry: &Registry,
    backend: &dyn EmbeddingBackend,
    index: &CdeIndex,
) -> Result<StandardizedValue, LlmError> {
    let q = embed_one(backend, &query_text(feature_name, value))?;
    let scores: Vec<f64> = index.cde_vectors.iter().map(|v| cosine(&q, v)).collect::<Result<_, _>>()?;
    let best = argmax(&scores).ok_or(LlmError::EmptyRegistry)?;
    let cde = &registry.cdes()[best];
    let (assigned, value_similarity) = match cde.kind {
        CdeKind::Numeric => {
            let unit = cde.canonical_unit().to_string();
            let v = split_number(value)
                .and_then(|(n, u)| convert_unit(n, if u.is_empty() { &unit } else { &u }, &unit).ok())
                .filter(|v| validate_bounds(*v, cde) == BoundsCheck::Accepted)
                .unwrap_or_else(|| cde.default.as_number().unwrap_or(0.0));
            (AssignedValue::Numeric { value: v, unit }, None)
        }
        CdeKind::Categorical => {
            let vq = embed_one(backend, value.trim())?;
            let vs: Vec<f64> = index.value_vectors[best].iter().map(|v| cosine(&vq, v)).collect::<Result<_, _>>()?;
            let j = argmax(&vs).ok_or(LlmError::EmptyRegistry)?;
            (AssignedValue::Code { value_code: cde.value_set[j].value_code.clone() }, Some(vs[j]))
        }
    };
    Ok(StandardizedValue {
        feature_name: feature_name.to_string(),
        value: value.to_string(),
        assignment: CdeAssignment {
            cde_id: cde.cde_id.clone(),
            value: assigned,
            feature: feature_name.to_string(),
            source_sentence: None,
            confidence: scores[best],
        },
        cde_similarity: scores[best],
        value_similarity,
        cde_scores: index.cde_ids.iter().cloned().zip(scores).collect(),
    })
}

/// Standardize every non-default extraction by embedding and fill the rest with defaults.
///
/// When two features land on the same CDE the higher CDE similarity wins. A
/// feature mapped to a CDE other than its registry binding gets a diagnostic.
pub fn standardize_by_embedding(
    extractions: &[FeatureExtraction],
    registry: &Registry,
    backend: &dyn EmbeddingBackend,
    index: &CdeIndex,
) -> Result<(Vec<CdeAssignment>, Vec<StandardizedValue>, Vec<Diagnostic>), LlmError> {
    let mut mapped: BTreeMap<String, StandardizedValue> = BTreeMap::new();
    let mut all = Vec::new();
    let mut diags = Vec::new();
    for e in extractions {
        let Ok(cde) = registry.lookup_feature(&e.feature_name) else { continue };
        if *e == FeatureExtraction::default_for(&e.feature_name, cde) {
            continue;
        }
        let value = match &e.value {
            ExtractedValue::Label(l) => l.clone(),
            ExtractedValue::Numeric { value, unit } => format!("{value} {unit}"),
        };
        let s = embed_standardize(&e.feature_name, &value, registry, backend, index)?;
        if s.assignment.cde_id != cde.cde_id {
            diags.push(
                Diagnostic::new(codes::CDE_REMAPPED, format!("mapped to {} instead of {}", s.assignment.cde_id, cde.cde_id))
                    .feature(&e.feature_name),
            );
        }
        let keep = mapped.get(&s.assignment.cde_id).is_none_or(|prev| s.cde_similarity > prev.cde_similarity);
        if keep {
            mapped.insert(s.assignment.cde_id.clone(), s.clone());
        }
        all.push(s);
    }
    let assignments = registry
        .cdes()
        .iter()
        .map(|cde| match mapped.get(&cde.cde_id) {
            Some(s) => s.assignment.clone(),
            None => {
                let feature = registry.feature_for_cde(&cde.cde_id).unwrap_or(&cde.cde_id);
                let value = match cde.kind {
                    CdeKind::Numeric => AssignedValue::Numeric {
                        value: cde.default.as_number().unwrap_or(0.0),
                        unit: cde.canonical_unit().to_string(),
                    },
                    CdeKind::Categorical => AssignedValue::Code {
                        value_code: cde.default.as_code().unwrap_or_default().to_string(),
                    },
                };
                CdeAssignment { cde_id: cde.cde_id.clone(), value, feature: feature.to_string(), source_sentence: None, confidence: 0.0 }
            }
        })
        .collect();
    Ok((assignments, all, diags))
}
