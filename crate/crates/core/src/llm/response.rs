//! Parsing model output into feature values, with a value-set guard.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mapper::{split_number, ExtractedValue, FeatureExtraction};
use crate::record::{codes, Diagnostic};
use crate::registry::{CdeDefinition, CdeKind, Registry, ABSENT, UNSPECIFIED};
use crate::units::{convert_unit, validate_bounds, BoundsCheck};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparsedReason {
    /// No `key: value` shape.
    Malformed,
    UnknownFeature,
    ValueNotInSet,
    /// The feature already had a value earlier in the response.
    Duplicate,
}

impl UnparsedReason {
    pub fn code(self) -> &'static str {
        match self {
            UnparsedReason::Malformed | UnparsedReason::Duplicate => codes::UNPARSED_LINE,
            UnparsedReason::UnknownFeature => codes::UNKNOWN_FEATURE,
            UnparsedReason::ValueNotInSet => codes::VALUE_NOT_IN_SET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnparsedLine {
    /// 1-based position among the non-blank lines (or JSON entries).
    pub line: usize,
    pub text: String,
    pub reason: UnparsedReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw_text: String,
    /// Canonical feature name -> value as written by the model.
    pub parsed: BTreeMap<String, String>,
    pub unparsed_lines: Vec<UnparsedLine>,
    /// Non-blank lines, or entries when the response was a JSON object.
    pub line_count: usize,
}

fn clean(s: &str) -> &str {
    let s = s.trim().trim_end_matches(',').trim();
    let s = s.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    s.strip_suffix('.').unwrap_or(s).trim()
}

fn value_ok(cde: &CdeDefinition, value: &str) -> bool {
    match cde.kind {
        CdeKind::Categorical => cde.value_by_label(value).is_some(),
        CdeKind::Numeric => {
            if value.eq_ignore_ascii_case(UNSPECIFIED) || value.eq_ignore_ascii_case(ABSENT) {
                return true;
            }
            match split_number(value) {
                Some((_, u)) if u.is_empty() => true,
                Some((_, u)) => convert_unit(1.0, &u, cde.canonical_unit()).is_ok(),
                None => false,
            }
        }
    }
}

fn entries(raw: &str) -> Vec<Result<(String, String), String>> {
    let trimmed = raw.trim();
    if trimmed.starts_with('{') {
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(trimmed) {
            return map
                .into_iter()
                .map(|(k, v)| match v {
                    serde_json::Value::String(s) => Ok((k, s)),
                    serde_json::Value::Number(n) => Ok((k, n.to_string())),
                    other => Err(format!("{k}: {other}")),
                })
                .collect();
        }
    }
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let body = l.trim().trim_start_matches(['-', '*', '•']).trim();
            match body.split_once(':') {
                Some((k, v)) if !clean(k).is_empty() && !clean(v).is_empty() => Ok((clean(k).to_string(), clean(v).to_string())),
                _ => Err(l.trim().to_string()),
            }
        })
        .collect()
}

/// Parse `key: value` lines, or a JSON object, against the registry.
///
/// Every non-blank line ends up either in `parsed` or in `unparsed_lines`.
pub fn parse_response(raw: &str, registry: &Registry) -> LlmResponse {
    let mut parsed = BTreeMap::new();
    let mut unparsed = Vec::new();
    let items = entries(raw);
    let line_count = items.len();
    for (i, item) in items.into_iter().enumerate() {
        let line = i + 1;
        let (key, value) = match item {
            Ok(kv) => kv,
            Err(text) => {
                unparsed.push(UnparsedLine { line, text, reason: UnparsedReason::Malformed });
                continue;
            }
        };
        let text = format!("{key}: {value}");
        let Some(feature) = registry.canonical_feature(&key) else {
            unparsed.push(UnparsedLine { line, text, reason: UnparsedReason::UnknownFeature });
            continue;
        };
        let cde = registry.lookup_feature(feature).expect("canonical feature has a CDE");
        if !value_ok(cde, &value) {
            unparsed.push(UnparsedLine { line, text, reason: UnparsedReason::ValueNotInSet });
        } else if parsed.contains_key(feature) {
            unparsed.push(UnparsedLine { line, text, reason: UnparsedReason::Duplicate });
        } else {
            parsed.insert(feature.to_string(), value);
        }
    }
    LlmResponse { raw_text: raw.to_string(), parsed, unparsed_lines: unparsed, line_count }
}

impl LlmResponse {
    /// One diagnostic per unparsed line.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.unparsed_lines
            .iter()
            .map(|u| Diagnostic::new(u.reason.code(), format!("response line {}: {}", u.line, u.text)))
            .collect()
    }

    /// A full extraction in CDE order; features the model did not give keep their default.
    pub fn extractions(&self, registry: &Registry) -> (Vec<FeatureExtraction>, Vec<Diagnostic>) {
        let mut diags = self.diagnostics();
        let mut out = Vec::new();
        for cde in registry.cdes() {
            let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
            let default = FeatureExtraction::default_for(feature, cde);
            let Some(value) = self.parsed.get(feature) else {
                out.push(default);
                continue;
            };
            let e = match cde.kind {
                CdeKind::Categorical => {
                    let label = &cde.value_by_label(value).expect("guarded by parse").label;
                    FeatureExtraction::label(feature, label, None, 1.0)
                }
                CdeKind::Numeric => match numeric(cde, value) {
                    Some(v) if validate_bounds(v, cde) == BoundsCheck::Accepted => FeatureExtraction {
                        feature_name: feature.to_string(),
                        value: ExtractedValue::Numeric { value: v, unit: cde.canonical_unit().to_string() },
                        source_sentence: None,
                        confidence: 1.0,
                    },
                    Some(v) => {
                        diags.push(
                            Diagnostic::new(codes::OUT_OF_BOUNDS, format!("{v} {} outside bounds", cde.canonical_unit()))
                                .feature(feature),
                        );
                        default
                    }
                    None => default,
                },
            };
            out.push(e);
        }
        (out, diags)
    }
}

fn numeric(cde: &CdeDefinition, value: &str) -> Option<f64> {
    let (n, u) = split_number(value)?;
    let u = if u.is_empty() { cde.canonical_unit().to_string() } else { u };
    convert_unit(n, &u, cde.canonical_unit()).ok()
}
