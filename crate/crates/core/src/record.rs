//! Serialized shapes shared by the pipeline, the LLM baseline and the CLI.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Grid, Phase};
use crate::llm::LlmResult;
use crate::mapper::{split_number, standardize, AssignedValue, ExtractedValue, FeatureExtraction, StandardizeError};
use crate::pipeline::ExtractionResult;
use crate::registry::{CdeDefinition, Registry};
use crate::units::convert_unit;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json { path: String, line: usize, message: String },
    #[error("duplicate report id {0:?}")]
    DuplicateReport(String),
    #[error(transparent)]
    Standardize(#[from] StandardizeError),
}

/// Something worth reporting about a run that did not stop it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.to_string(),
            feature: None,
            sentence: None,
            message: message.into(),
        }
    }

    pub fn feature(mut self, feature: impl Into<String>) -> Self {
        self.feature = Some(feature.into());
        self
    }

    pub fn sentence(mut self, sentence: usize) -> Self {
        self.sentence = Some(sentence);
        self
    }
}

pub mod codes {
    pub const NO_SECTIONS: &str = "no_sections";
    pub const PARSER: &str = "parser";
    pub const OUT_OF_BOUNDS: &str = "out_of_bounds";
    pub const UNIT_CONVERSION: &str = "unit_conversion";
    pub const NEGATION: &str = "negation_rule";
    pub const DISJUNCTION: &str = "disjunction_rule";
    pub const BILATERAL: &str = "bilateral_rule";
    pub const UNPARSED_LINE: &str = "unparsed_line";
    pub const UNKNOWN_FEATURE: &str = "unknown_feature";
    pub const VALUE_NOT_IN_SET: &str = "value_not_in_set";
    pub const EMPTY_SENTENCE: &str = "empty_sentence";
    pub const CDE_REMAPPED: &str = "cde_remapped";
}

/// One report to process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportInput {
    pub report_id: String,
    pub text: String,
}

/// Per-report output of either system, and the shape of ground-truth files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub report_id: String,
    #[serde(default)]
    pub system: String,
    /// Feature name -> label, or number in the canonical unit.
    #[serde(default)]
    pub features: BTreeMap<String, String>,
    /// CDE id -> value code, or number in the canonical unit. Serialized as a
    /// list of `{cde_id, value_code}` or `{cde_id, value, unit}` entries.
    #[serde(default, with = "assignment_list")]
    pub assignments: BTreeMap<String, AssignedValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
}

impl ResultRecord {
    pub fn from_extraction(result: &ExtractionResult, system: &str) -> Self {
        ResultRecord {
            report_id: result.report_id.clone(),
            system: system.to_string(),
            features: result.extractions.iter().map(|e| (e.feature_name.clone(), e.value.render())).collect(),
            assignments: result.assignments.iter().map(|a| (a.cde_id.clone(), a.value.clone())).collect(),
            diagnostics: result.diagnostics.clone(),
            manifest_digest: None,
        }
    }

    pub fn from_llm(result: &LlmResult, system: &str) -> Self {
        ResultRecord {
            report_id: result.report_id.clone(),
            system: system.to_string(),
            features: result.extractions.iter().map(|e| (e.feature_name.clone(), e.value.render())).collect(),
            assignments: result.assignments.iter().map(|a| (a.cde_id.clone(), a.value.clone())).collect(),
            diagnostics: result.diagnostics.clone(),
            manifest_digest: None,
        }
    }

    pub fn with_digest(mut self, digest: &str) -> Self {
        self.manifest_digest = Some(digest.to_string());
        self
    }

    /// Complete both maps against the registry: missing features take their
    /// default and missing assignments are derived from the features.
    pub fn complete(&mut self, registry: &Registry) -> Result<(), RecordError> {
        let mut extractions = Vec::new();
        for cde in registry.cdes() {
            let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
            let default = FeatureExtraction::default_for(feature, cde);
            let value = match self.features.get(feature) {
                None => default.value.clone(),
                Some(raw) if cde.is_numeric() => numeric_value(raw, cde).unwrap_or_else(|| default.value.clone()),
                Some(raw) => ExtractedValue::Label(raw.clone()),
            };
            self.features.insert(feature.to_string(), value.render());
            extractions.push(FeatureExtraction { value, ..default });
        }
        for a in standardize(&extractions, registry)? {
            self.assignments.entry(a.cde_id).or_insert(a.value);
        }
        Ok(())
    }
}

mod assignment_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::mapper::AssignedValue;

    #[derive(Serialize, Deserialize)]
    struct Entry<V> {
        cde_id: String,
        #[serde(flatten)]
        value: V,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<String, AssignedValue>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(cde_id, value)| Entry { cde_id: cde_id.clone(), value }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, AssignedValue>, D::Error> {
        let entries: Vec<Entry<AssignedValue>> = Vec::deserialize(d)?;
        let mut map = BTreeMap::new();
        for e in entries {
            if map.insert(e.cde_id.clone(), e.value).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate assignment for {}", e.cde_id)));
            }
        }
        Ok(map)
    }
}

/// A number with an optional unit, converted to the CDE's canonical unit.
fn numeric_value(raw: &str, cde: &CdeDefinition) -> Option<ExtractedValue> {
    let (n, u) = split_number(raw)?;
    let unit = cde.canonical_unit();
    let v = if u.is_empty() { n } else { convert_unit(n, &u, unit).ok()? };
    Some(ExtractedValue::Numeric { value: v, unit: unit.to_string() })
}

/// Reports from a `.jsonl` file of `{report_id, text}`, or a plain text file
/// holding one report whose id is the file stem.
pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<ReportInput>, RecordError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let reports: Vec<ReportInput> = read_jsonl(path)?;
        let mut seen = std::collections::HashSet::new();
        for r in &reports {
            if !seen.insert(r.report_id.as_str()) {
                return Err(RecordError::DuplicateReport(r.report_id.clone()));
            }
        }
        return Ok(reports);
    }
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Read { path: path.display().to_string(), source })?;
    let report_id = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    Ok(vec![ReportInput { report_id, text }])
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, RecordError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| RecordError::Read { path: name.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordError::Read { path: name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RecordError::Json { path: name.clone(), line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Write via a temporary file in the same directory, then rename into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<(), RecordError> {
    let path = path.as_ref();
    let err = |source| RecordError::Write { path: path.display().to_string(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    // Temp files are created 0600; give the result ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(err)?;
    }
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Scoring grid of one phase from result records.
pub fn grid(records: &[ResultRecord], phase: Phase) -> Grid {
    records
        .iter()
        .map(|r| {
            let cells = match phase {
                Phase::Extraction => r.features.clone(),
                Phase::Standardization => r.assignments.iter().map(|(k, v)| (k.clone(), v.render())).collect(),
            };
            (r.report_id.clone(), cells)
        })
        .collect()
}
