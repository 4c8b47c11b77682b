//! CDE catalog: definitions, value sets, feature classes and annotated exemplars.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label every categorical value set must carry; it doubles as the default.
pub const UNSPECIFIED: &str = "unspecified";
pub const ABSENT: &str = "absent";
pub const PRESENT: &str = "present";
pub const INDETERMINANT: &str = "indeterminant";

pub const PRESENCE_LABELS: [&str; 4] = [PRESENT, ABSENT, UNSPECIFIED, INDETERMINANT];

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registry does not match schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("duplicate cde_id {0}")]
    DuplicateCde(String),
    #[error("invalid record {record}: {message}")]
    Invalid { record: String, message: String },
}

impl RegistryError {
    fn invalid(record: impl Into<String>, message: impl Into<String>) -> Self {
        RegistryError::Invalid {
            record: record.into(),
            message: message.into(),
        }
    }
}

/// Lookup failure, kept apart from load errors.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown feature {0:?}")]
pub struct UnknownFeature(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdeKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdeValue {
    pub value_code: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
}

/// Categorical defaults are value codes, numeric defaults are 0.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DefaultValue {
    Code(String),
    Number(f64),
}

impl DefaultValue {
    pub fn as_code(&self) -> Option<&str> {
        match self {
            DefaultValue::Code(c) => Some(c),
            DefaultValue::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            DefaultValue::Number(n) => Some(*n),
            DefaultValue::Code(_) => None,
        }
    }
}

/// How several numbers in one sentence collapse to one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NumericAggregate {
    #[default]
    Nearest,
    Largest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdeDefinition {
    pub cde_id: String,
    pub display_name: String,
    pub cde_set_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub cde_set_name: String,
    pub kind: CdeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub value_set: Vec<CdeValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    pub default: DefaultValue,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<NumericAggregate>,
}

impl CdeDefinition {
    pub fn is_numeric(&self) -> bool {
        self.kind == CdeKind::Numeric
    }

    pub fn value_by_code(&self, code: &str) -> Option<&CdeValue> {
        self.value_set.iter().find(|v| v.value_code == code)
    }

    /// Case-insensitive label lookup.
    pub fn value_by_label(&self, label: &str) -> Option<&CdeValue> {
        let label = label.trim();
        self.value_set
            .iter()
            .find(|v| v.label == label)
            .or_else(|| self.value_set.iter().find(|v| v.label.eq_ignore_ascii_case(label)))
    }

    pub fn unspecified(&self) -> Option<&CdeValue> {
        self.value_by_label(UNSPECIFIED)
    }

    /// True when every label belongs to the presence vocabulary.
    pub fn is_presence_type(&self) -> bool {
        self.kind == CdeKind::Categorical
            && self.value_set.iter().any(|v| v.label == PRESENT)
            && self
                .value_set
                .iter()
                .all(|v| PRESENCE_LABELS.contains(&v.label.as_str()))
    }

    pub fn canonical_unit(&self) -> &str {
        self.unit.as_deref().unwrap_or("")
    }

    pub fn aggregate(&self) -> NumericAggregate {
        self.aggregate.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinding {
    pub feature_name: String,
    pub cde_id: String,
    /// Key used in LLM prompts; falls back to the feature name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_key: Option<String>,
    /// Human readable name used by generic augmentation templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FeatureBinding {
    pub fn prompt_key(&self) -> &str {
        self.prompt_key.as_deref().unwrap_or(&self.feature_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeValue {
    pub type_label: String,
    pub feature_name: String,
    #[serde(default)]
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClass {
    pub class_id: String,
    pub name: String,
    pub member_features: Vec<FeatureBinding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_values: Vec<TypeValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concept_terms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    #[default]
    Human,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub sentence: String,
    pub feature_values: BTreeMap<String, String>,
    #[serde(default)]
    pub source: ExampleSource,
}

/// On-disk registry document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RegistryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default)]
    pub cdes: Vec<CdeDefinition>,
    #[serde(default)]
    pub feature_classes: Vec<FeatureClass>,
    #[serde(default)]
    pub exemplars: Vec<AnnotatedExample>,
}

/// Position of a feature inside the class table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureRef {
    pub class: usize,
    pub member: usize,
    pub cde: usize,
}

/// Validated, immutable registry.
#[derive(Debug, Clone)]
pub struct Registry {
    file: RegistryFile,
    cde_index: HashMap<String, usize>,
    features: HashMap<String, FeatureRef>,
    aliases: HashMap<String, String>,
    /// Feature names in CDE order.
    feature_order: Vec<String>,
    /// Exemplar indices per class, in corpus order.
    class_exemplars: Vec<Vec<usize>>,
    value_labels: HashMap<String, (usize, usize)>,
}

/// A value stored in a default record or assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordValue {
    Code(String),
    Number(f64),
}

impl fmt::Display for RecordValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordValue::Code(c) => f.write_str(c),
            RecordValue::Number(n) => write!(f, "{n:?}"),
        }
    }
}

impl Registry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    /// The shipped 44-CDE chest radiograph registry.
    pub fn chest_xr() -> Self {
        Self::from_json(crate::data::REGISTRY_CHEST_XR).expect("shipped registry is valid")
    }

    pub fn from_file(file: RegistryFile) -> Result<Self, RegistryError> {
        let mut cde_index = HashMap::new();
        let mut value_labels = HashMap::new();
        for (i, cde) in file.cdes.iter().enumerate() {
            if cde_index.insert(cde.cde_id.clone(), i).is_some() {
                return Err(RegistryError::DuplicateCde(cde.cde_id.clone()));
            }
            validate_cde(cde)?;
            for (j, v) in cde.value_set.iter().enumerate() {
                value_labels.insert(v.value_code.clone(), (i, j));
            }
        }

        let mut features = HashMap::new();
        let mut aliases = HashMap::new();
        let mut bound_cdes: HashMap<&str, &str> = HashMap::new();
        for (ci, class) in file.feature_classes.iter().enumerate() {
            for (mi, m) in class.member_features.iter().enumerate() {
                let Some(&cde) = cde_index.get(&m.cde_id) else {
                    return Err(RegistryError::invalid(
                        &m.feature_name,
                        format!("bound to unknown cde {}", m.cde_id),
                    ));
                };
                if m.feature_name.is_empty() {
                    return Err(RegistryError::invalid(&class.class_id, "empty feature name"));
                }
                let r = FeatureRef { class: ci, member: mi, cde };
                if features.insert(m.feature_name.clone(), r).is_some() {
                    return Err(RegistryError::invalid(
                        &m.feature_name,
                        "feature bound in more than one place",
                    ));
                }
                if let Some(prev) = bound_cdes.insert(&m.cde_id, &m.feature_name) {
                    return Err(RegistryError::invalid(
                        &m.cde_id,
                        format!("bound by both {prev} and {}", m.feature_name),
                    ));
                }
                if let Some(key) = &m.prompt_key {
                    if key != &m.feature_name {
                        aliases.insert(key.clone(), m.feature_name.clone());
                    }
                }
            }
            for t in &class.type_values {
                if !class.member_features.iter().any(|m| m.feature_name == t.feature_name) {
                    return Err(RegistryError::invalid(
                        &class.class_id,
                        format!("type value {} names a feature outside the class", t.type_label),
                    ));
                }
            }
        }
        for cde in &file.cdes {
            if !bound_cdes.contains_key(cde.cde_id.as_str()) {
                return Err(RegistryError::invalid(&cde.cde_id, "cde is not bound to any feature class"));
            }
        }
        for alias in aliases.keys() {
            if features.contains_key(alias) {
                return Err(RegistryError::invalid(alias, "prompt key collides with a feature name"));
            }
        }

        let mut feature_order = vec![String::new(); file.cdes.len()];
        for (name, r) in &features {
            feature_order[r.cde] = name.clone();
        }

        let mut class_exemplars = vec![Vec::new(); file.feature_classes.len()];
        for (ei, ex) in file.exemplars.iter().enumerate() {
            if ex.sentence.trim().is_empty() {
                return Err(RegistryError::invalid(format!("exemplar {ei}"), "empty sentence"));
            }
            let mut classes = Vec::new();
            for (feature, value) in &ex.feature_values {
                let Some(r) = features.get(feature) else {
                    return Err(RegistryError::invalid(
                        format!("exemplar {ei}"),
                        format!("unknown feature {feature}"),
                    ));
                };
                let cde = &file.cdes[r.cde];
                match cde.kind {
                    CdeKind::Categorical if cde.value_by_label(value).is_none() => {
                        return Err(RegistryError::invalid(
                            format!("exemplar {ei}"),
                            format!("{value:?} is not a value of {feature}"),
                        ));
                    }
                    CdeKind::Numeric if value.trim().parse::<f64>().is_err() => {
                        return Err(RegistryError::invalid(
                            format!("exemplar {ei}"),
                            format!("{value:?} is not numeric for {feature}"),
                        ));
                    }
                    _ => {}
                }
                if !classes.contains(&r.class) {
                    classes.push(r.class);
                }
            }
            for c in classes {
                class_exemplars[c].push(ei);
            }
        }

        Ok(Registry {
            file,
            cde_index,
            features,
            aliases,
            feature_order,
            class_exemplars,
            value_labels,
        })
    }

    pub fn file(&self) -> &RegistryFile {
        &self.file
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("registry serializes")
    }

    pub fn version(&self) -> Option<&str> {
        self.file.version.as_deref()
    }

    pub fn cdes(&self) -> &[CdeDefinition] {
        &self.file.cdes
    }

    pub fn classes(&self) -> &[FeatureClass] {
        &self.file.feature_classes
    }

    pub fn exemplars(&self) -> &[AnnotatedExample] {
        &self.file.exemplars
    }

    pub fn is_empty(&self) -> bool {
        self.file.cdes.is_empty()
    }

    pub fn cde(&self, cde_id: &str) -> Option<&CdeDefinition> {
        self.cde_index.get(cde_id).map(|&i| &self.file.cdes[i])
    }

    /// Feature names in registry (CDE) order.
    pub fn feature_names(&self) -> &[String] {
        &self.feature_order
    }

    pub fn class(&self, class_id: &str) -> Option<&FeatureClass> {
        self.file.feature_classes.iter().find(|c| c.class_id == class_id)
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.file.feature_classes.iter().position(|c| c.class_id == class_id)
    }

    /// Exemplar indices annotating at least one feature of the class.
    pub fn class_exemplars(&self, class: usize) -> &[usize] {
        &self.class_exemplars[class]
    }

    /// Resolve a canonical feature name or a prompt key.
    pub fn canonical_feature<'a>(&'a self, name: &'a str) -> Option<&'a str> {
        if let Some((k, _)) = self.features.get_key_value(name) {
            return Some(k.as_str());
        }
        self.aliases.get(name).map(String::as_str)
    }

    pub fn feature_ref(&self, name: &str) -> Option<FeatureRef> {
        let name = self.canonical_feature(name)?;
        self.features.get(name).copied()
    }

    pub fn binding(&self, name: &str) -> Option<&FeatureBinding> {
        let r = self.feature_ref(name)?;
        Some(&self.file.feature_classes[r.class].member_features[r.member])
    }

    pub fn lookup_feature(&self, name: &str) -> Result<&CdeDefinition, UnknownFeature> {
        self.feature_ref(name)
            .map(|r| &self.file.cdes[r.cde])
            .ok_or_else(|| UnknownFeature(name.to_string()))
    }

    pub fn feature_for_cde(&self, cde_id: &str) -> Option<&str> {
        self.cde_index.get(cde_id).map(|&i| self.feature_order[i].as_str())
    }

    /// Label of a value code, searching all CDEs.
    pub fn value_label(&self, value_code: &str) -> Option<&str> {
        self.value_labels
            .get(value_code)
            .map(|&(c, v)| self.file.cdes[c].value_set[v].label.as_str())
    }

    pub fn default_value(&self, cde: &CdeDefinition) -> RecordValue {
        match &cde.default {
            DefaultValue::Code(c) => RecordValue::Code(c.clone()),
            DefaultValue::Number(n) => RecordValue::Number(*n),
        }
    }

    /// Default value per CDE: unspecified code or 0.0.
    pub fn default_record(&self) -> BTreeMap<String, RecordValue> {
        self.file
            .cdes
            .iter()
            .map(|c| (c.cde_id.clone(), self.default_value(c)))
            .collect()
    }

    /// Number of human exemplars annotating each (feature, value label) pair.
    pub fn coverage(&self, exemplars: &[AnnotatedExample]) -> BTreeMap<(String, String), usize> {
        let mut out = BTreeMap::new();
        for cde in self.cdes() {
            let feature = self.feature_for_cde(&cde.cde_id).unwrap_or_default();
            for v in &cde.value_set {
                out.insert((feature.to_string(), v.label.clone()), 0);
            }
        }
        for ex in exemplars.iter().filter(|e| e.source == ExampleSource::Human) {
            for (f, v) in &ex.feature_values {
                let Some(feature) = self.canonical_feature(f) else { continue };
                let Ok(cde) = self.lookup_feature(feature) else { continue };
                if let Some(val) = cde.value_by_label(v) {
                    *out.entry((feature.to_string(), val.label.clone())).or_default() += 1;
                }
            }
        }
        out
    }

    /// Classes each exemplar belongs to.
    pub fn exemplar_classes(&self, ex: &AnnotatedExample) -> Vec<usize> {
        let mut out: Vec<usize> = ex
            .feature_values
            .keys()
            .filter_map(|f| self.feature_ref(f).map(|r| r.class))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Registry copy whose exemplar list is replaced, revalidated.
    pub fn with_exemplars(&self, exemplars: Vec<AnnotatedExample>) -> Result<Self, RegistryError> {
        let mut file = self.file.clone();
        file.exemplars = exemplars;
        Self::from_file(file)
    }
}

fn validate_cde(cde: &CdeDefinition) -> Result<(), RegistryError> {
    if cde.cde_id.trim().is_empty() {
        return Err(RegistryError::invalid("<cde>", "empty cde_id"));
    }
    match cde.kind {
        CdeKind::Categorical => {
            if cde.value_set.is_empty() {
                return Err(RegistryError::invalid(&cde.cde_id, "categorical cde without values"));
            }
            let mut seen = HashSet::new();
            for v in &cde.value_set {
                if !seen.insert(v.value_code.as_str()) {
                    return Err(RegistryError::invalid(
                        &cde.cde_id,
                        format!("duplicate value code {}", v.value_code),
                    ));
                }
            }
            let Some(unspec) = cde.unspecified() else {
                return Err(RegistryError::invalid(&cde.cde_id, "value set lacks \"unspecified\""));
            };
            match &cde.default {
                DefaultValue::Code(code) if cde.value_by_code(code).is_some() => {
                    if code != &unspec.value_code {
                        return Err(RegistryError::invalid(
                            &cde.cde_id,
                            "default must be the unspecified code",
                        ));
                    }
                }
                other => {
                    return Err(RegistryError::invalid(
                        &cde.cde_id,
                        format!("default {other:?} is not in the value set"),
                    ))
                }
            }
        }
        CdeKind::Numeric => {
            let Some([lo, hi]) = cde.bounds else {
                return Err(RegistryError::invalid(&cde.cde_id, "numeric cde without bounds"));
            };
            if cde.unit.as_deref().unwrap_or("").is_empty() {
                return Err(RegistryError::invalid(&cde.cde_id, "numeric cde without unit"));
            }
            match cde.default {
                DefaultValue::Number(d) if d == 0.0 && lo <= d && d <= hi => {}
                ref other => {
                    return Err(RegistryError::invalid(
                        &cde.cde_id,
                        format!("numeric default {other:?} must be 0.0 within bounds [{lo}, {hi}]"),
                    ))
                }
            }
        }
    }
    Ok(())
}
