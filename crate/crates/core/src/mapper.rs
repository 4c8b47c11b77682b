//! Phase 2: turn a sentence's retained classes into feature values, then
//! standardize feature values into CDE assignments.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed, EmbeddingBackend, EmbeddingError, EmbeddingVector, SimilarityError};
use crate::nlp::{self, EntityKind, EntityLexicons, LexiconFile, PhraseSet};
use crate::parser::SentenceUnit;
use crate::record::{codes, Diagnostic};
use crate::retrieval::Retriever;
use crate::registry::{AnnotatedExample, CdeDefinition, CdeKind, NumericAggregate, Registry, ABSENT, PRESENCE_LABELS, PRESENT, UNSPECIFIED};
use crate::units::{self, convert_unit, validate_bounds, BoundsCheck, UnitError};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("feature class {0} has no exemplars to map from")]
    NoExemplars(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Error, PartialEq)]
pub enum StandardizeError {
    #[error("feature {0:?} is not in the registry")]
    UnknownFeature(String),
    #[error("feature {feature}: label {label:?} is not in its value set")]
    UnresolvableLabel { feature: String, label: String },
    #[error("feature {feature}: {message}")]
    KindMismatch { feature: String, message: String },
    #[error("feature {feature}: {source}")]
    Unit {
        feature: String,
        #[source]
        source: UnitError,
    },
}

/// Extracted value: a categorical label or a number with its unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtractedValue {
    Numeric { value: f64, unit: String },
    Label(String),
}

impl ExtractedValue {
    pub fn label(&self) -> Option<&str> {
        match self {
            ExtractedValue::Label(l) => Some(l),
            ExtractedValue::Numeric { .. } => None,
        }
    }

    /// Canonical string form used for exact-match scoring.
    pub fn render(&self) -> String {
        match self {
            ExtractedValue::Label(l) => l.clone(),
            ExtractedValue::Numeric { value, .. } => format!("{value:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtraction {
    pub feature_name: String,
    pub value: ExtractedValue,
    /// Index of the sentence the value came from; none for defaults.
    pub source_sentence: Option<usize>,
    pub confidence: f64,
}

impl FeatureExtraction {
    pub fn label(feature: &str, label: &str, source: Option<usize>, confidence: f64) -> Self {
        FeatureExtraction {
            feature_name: feature.to_string(),
            value: ExtractedValue::Label(label.to_string()),
            source_sentence: source,
            confidence,
        }
    }

    /// The default extraction for a feature: unspecified or 0.0 in the canonical unit.
    pub fn default_for(feature: &str, cde: &CdeDefinition) -> Self {
        let value = match cde.kind {
            CdeKind::Numeric => ExtractedValue::Numeric {
                value: cde.default.as_number().unwrap_or(0.0),
                unit: cde.canonical_unit().to_string(),
            },
            CdeKind::Categorical => ExtractedValue::Label(
                cde.default
                    .as_code()
                    .and_then(|c| cde.value_by_code(c))
                    .map_or(UNSPECIFIED, |v| v.label.as_str())
                    .to_string(),
            ),
        };
        FeatureExtraction {
            feature_name: feature.to_string(),
            value,
            source_sentence: None,
            confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssignedValue {
    Code { value_code: String },
    Numeric { value: f64, unit: String },
}

impl AssignedValue {
    pub fn code(&self) -> Option<&str> {
        match self {
            AssignedValue::Code { value_code } => Some(value_code),
            AssignedValue::Numeric { .. } => None,
        }
    }

    /// `value_code` or the number, as used for exact-match scoring.
    pub fn render(&self) -> String {
        match self {
            AssignedValue::Code { value_code } => value_code.clone(),
            AssignedValue::Numeric { value, .. } => format!("{value:?}"),
        }
    }
}

/// One standardized CDE value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdeAssignment {
    pub cde_id: String,
    #[serde(flatten)]
    pub value: AssignedValue,
    pub feature: String,
    pub source_sentence: Option<usize>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperConfig {
    /// Similarity an exemplar needs before its annotation is copied.
    pub threshold: f64,
    /// Minimum entity-to-value similarity for categorical matching.
    pub categorical_floor: f64,
    pub bilateral_rule: bool,
    /// Max token distance between a side word and the finding for the bilateral rule.
    pub bilateral_window: usize,
    pub negation_rule: bool,
    pub negation_triggers: Vec<String>,
    /// Max tokens between a negation trigger and the finding it negates.
    pub negation_window: usize,
    pub disjunction_rule: bool,
    pub disjunction_connectors: Vec<String>,
}

impl Default for MapperConfig {
    fn default() -> Self {
        let lex = LexiconFile::shipped();
        MapperConfig {
            threshold: 0.9,
            categorical_floor: 0.5,
            bilateral_rule: true,
            bilateral_window: 3,
            negation_rule: true,
            negation_triggers: lex.negation_triggers,
            negation_window: 3,
            disjunction_rule: true,
            disjunction_connectors: lex.disjunction_connectors,
        }
    }
}

/// One candidate value of a categorical CDE and the texts it is matched by.
#[derive(Debug, Clone)]
struct ValueTarget {
    label: String,
    texts: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone)]
struct CategoricalTargets {
    kind: EntityKind,
    values: Vec<ValueTarget>,
}

/// Result of copying an annotation from the closest exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub label: String,
    pub similarity: f64,
    pub exemplar: usize,
}

/// Result of entity-to-value matching.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalMatch {
    pub label: String,
    pub similarity: f64,
    pub entity: String,
}

/// Precomputed state for value mapping over one registry and exemplar corpus.
pub struct ValueMapper {
    config: MapperConfig,
    /// Canonical (feature -> label) annotations per corpus exemplar.
    annotations: Vec<BTreeMap<String, String>>,
    class_concepts: Vec<PhraseSet>,
    type_terms: HashMap<String, PhraseSet>,
    typed_classes: Vec<bool>,
    targets: HashMap<String, CategoricalTargets>,
    negation: Vec<Vec<String>>,
}

fn is_presence_label(label: &str) -> bool {
    PRESENCE_LABELS.contains(&label)
}

/// Categorical feature that records presence (carries both present and absent).
fn is_presence_like(cde: &CdeDefinition) -> bool {
    cde.kind == CdeKind::Categorical && cde.value_by_label(PRESENT).is_some() && cde.value_by_label(ABSENT).is_some()
}

/// Location for value sets naming places, modifier otherwise.
fn value_kind(cde: &CdeDefinition, lexicons: &EntityLexicons) -> EntityKind {
    let (mut loc, mut modi) = (0, 0);
    for v in cde.value_set.iter().filter(|v| !is_presence_label(&v.label)) {
        let toks = nlp::tokenize(&v.label);
        let ents = lexicons.tag(&v.label, &toks);
        loc += ents.iter().filter(|e| e.kind == EntityKind::Location).count();
        modi += ents.iter().filter(|e| e.kind == EntityKind::Modifier).count();
    }
    if loc > modi {
        EntityKind::Location
    } else {
        EntityKind::Modifier
    }
}

impl ValueMapper {
    pub fn new(
        registry: &Registry,
        corpus: &[AnnotatedExample],
        backend: &dyn EmbeddingBackend,
        lexicons: &EntityLexicons,
        config: MapperConfig,
    ) -> Result<Self, MappingError> {
        let annotations: Vec<BTreeMap<String, String>> = corpus
            .iter()
            .map(|ex| {
                ex.feature_values
                    .iter()
                    .filter_map(|(f, v)| {
                        let feature = registry.canonical_feature(f)?;
                        let cde = registry.lookup_feature(feature).ok()?;
                        let label = cde.value_by_label(v).map_or(v.clone(), |x| x.label.clone());
                        Some((feature.to_string(), label))
                    })
                    .collect()
            })
            .collect();

        let class_concepts = registry.classes().iter().map(|c| PhraseSet::new(&c.concept_terms)).collect();
        let typed_classes = registry.classes().iter().map(|c| !c.type_values.is_empty()).collect();
        let type_terms = registry
            .classes()
            .iter()
            .flat_map(|c| &c.type_values)
            .map(|t| (t.feature_name.clone(), PhraseSet::new(&t.terms)))
            .collect();

        let units: Vec<SentenceUnit> = corpus.iter().map(|e| SentenceUnit::from_text(&e.sentence, lexicons)).collect();
        let mut targets = HashMap::new();
        let mut pending: Vec<(String, usize, String)> = Vec::new();
        for cde in registry.cdes().iter().filter(|c| c.kind == CdeKind::Categorical && !c.is_presence_type()) {
            let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
            let kind = value_kind(cde, lexicons);
            let mut values: Vec<ValueTarget> = cde
                .value_set
                .iter()
                .filter(|v| !is_presence_label(&v.label))
                .map(|v| {
                    let mut texts = vec![v.label.clone()];
                    if !v.description.trim().is_empty() {
                        texts.push(v.description.clone());
                    }
                    ValueTarget { label: v.label.clone(), texts, vectors: vec![] }
                })
                .collect();
            for (label, usage) in usages(feature, &values, kind, &annotations, &units) {
                if let Some(t) = values.iter_mut().find(|t| t.label == label) {
                    t.texts.push(usage);
                }
            }
            for (vi, t) in values.iter().enumerate() {
                for text in &t.texts {
                    pending.push((cde.cde_id.clone(), vi, text.clone()));
                }
            }
            targets.insert(cde.cde_id.clone(), CategoricalTargets { kind, values });
        }
        let texts: Vec<&str> = pending.iter().map(|(_, _, t)| t.as_str()).collect();
        let vectors = if texts.is_empty() { vec![] } else { embed(backend, &texts)? };
        for ((cde_id, vi, _), v) in pending.into_iter().zip(vectors) {
            targets.get_mut(&cde_id).expect("target exists").values[vi].vectors.push(v);
        }

        let negation = config
            .negation_triggers
            .iter()
            .map(|t| nlp::tokenize(t).into_iter().map(|t| t.stem).collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect();

        Ok(ValueMapper { config, annotations, class_concepts, type_terms, typed_classes, targets, negation })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    /// Token ranges where the class's finding is named in the sentence.
    pub fn concept_spans(&self, sentence: &SentenceUnit, class: usize) -> Vec<(usize, usize)> {
        let stems: Vec<&str> = sentence.stems.iter().map(String::as_str).collect();
        self.class_concepts[class].find_all(&stems)
    }

    fn type_gate(&self, sentence: &SentenceUnit, feature: &str) -> Option<bool> {
        let terms = self.type_terms.get(feature)?;
        let stems: Vec<&str> = sentence.stems.iter().map(String::as_str).collect();
        Some(!terms.find_all(&stems).is_empty())
    }

    /// Copy the feature's annotation from the most similar class exemplar at or above threshold.
    pub fn map_presence(
        &self,
        registry: &Registry,
        retriever: &Retriever,
        sentence_vector: &EmbeddingVector,
        class: usize,
        feature: &str,
    ) -> Result<Option<Vote>, MappingError> {
        let docs = retriever.class_docs(class);
        if docs.is_empty() {
            return Err(MappingError::NoExemplars(registry.classes()[class].class_id.clone()));
        }
        let mut best: Option<Vote> = None;
        for &d in docs {
            let Some(label) = self.annotations.get(d).and_then(|a| a.get(feature)) else { continue };
            let sim = cosine(sentence_vector, retriever.exemplar_vector(d))?;
            if sim >= self.config.threshold && best.as_ref().is_none_or(|b| sim > b.similarity) {
                best = Some(Vote { label: label.clone(), similarity: sim, exemplar: d });
            }
        }
        Ok(best)
    }

    /// Match the sentence's location or modifier entities against the CDE's value texts.
    pub fn map_categorical(
        &self,
        sentence: &SentenceUnit,
        cde: &CdeDefinition,
        backend: &dyn EmbeddingBackend,
    ) -> Result<Option<CategoricalMatch>, MappingError> {
        let Some(targets) = self.targets.get(&cde.cde_id) else { return Ok(None) };
        let entities: Vec<&str> = sentence.entities_of(targets.kind).map(|e| e.text.as_str()).collect();
        if entities.is_empty() {
            return Ok(None);
        }
        let vectors = embed(backend, &entities)?;
        let mut best: Option<CategoricalMatch> = None;
        for t in &targets.values {
            for (e, ev) in entities.iter().zip(&vectors) {
                for tv in &t.vectors {
                    let sim = cosine(ev, tv)?;
                    if sim >= self.config.categorical_floor && best.as_ref().is_none_or(|b| sim > b.similarity) {
                        best = Some(CategoricalMatch { label: t.label.clone(), similarity: sim, entity: e.to_string() });
                    }
                }
            }
        }
        Ok(best)
    }

    /// Values for every feature of one class from the sentence that won it.
    pub fn map_class(
        &self,
        registry: &Registry,
        retriever: &Retriever,
        backend: &dyn EmbeddingBackend,
        sentence: &SentenceUnit,
        sentence_vector: &EmbeddingVector,
        class: usize,
        class_score: f64,
    ) -> Result<(Vec<FeatureExtraction>, Vec<Diagnostic>), MappingError> {
        let mut out = Vec::new();
        let mut diags = Vec::new();
        let concept_present = !self.concept_spans(sentence, class).is_empty();
        let src = Some(sentence.index);
        for binding in &registry.classes()[class].member_features {
            let feature = binding.feature_name.as_str();
            let Some(cde) = registry.cde(&binding.cde_id) else { continue };
            if cde.is_numeric() {
                let concepts = &self.class_concepts[class];
                let Some((value, unit)) = extract_numeric(sentence, cde, concepts) else { continue };
                match convert_unit(value, &unit, cde.canonical_unit()) {
                    Err(e) => diags.push(
                        Diagnostic::new(codes::UNIT_CONVERSION, format!("{value} {unit}: {e}; kept default"))
                            .feature(feature)
                            .sentence(sentence.index),
                    ),
                    Ok(v) => match validate_bounds(v, cde) {
                        BoundsCheck::Accepted => out.push(FeatureExtraction {
                            feature_name: feature.to_string(),
                            value: ExtractedValue::Numeric { value: v, unit: cde.canonical_unit().to_string() },
                            source_sentence: src,
                            confidence: class_score,
                        }),
                        BoundsCheck::Rejected => diags.push(
                            Diagnostic::new(
                                codes::OUT_OF_BOUNDS,
                                format!("{v} {} outside {:?}; kept default", cde.canonical_unit(), cde.bounds),
                            )
                            .feature(feature)
                            .sentence(sentence.index),
                        ),
                    },
                }
                continue;
            }
            if !cde.is_presence_type() {
                let gate = self.type_gate(sentence, feature).unwrap_or(concept_present);
                if gate {
                    if let Some(m) = self.map_categorical(sentence, cde, backend)? {
                        out.push(FeatureExtraction::label(feature, &m.label, src, m.similarity));
                        continue;
                    }
                }
            }
            if let Some(v) = self.map_presence(registry, retriever, sentence_vector, class, feature)? {
                out.push(FeatureExtraction::label(feature, &v.label, src, v.similarity));
            }
        }
        Ok((out, diags))
    }

    /// Sentence-level overrides: bilateral, disjunction and negation, in that order.
    ///
    /// Only classes won by this sentence are touched, so features no candidate
    /// sentence reached keep their defaults.
    pub fn apply_rules(
        &self,
        registry: &Registry,
        sentence: &SentenceUnit,
        won: &[usize],
        extractions: &mut BTreeMap<String, FeatureExtraction>,
        diags: &mut Vec<Diagnostic>,
    ) {
        let src = Some(sentence.index);
        let mut set = |feature: &str, label: &str, code: &str, diags: &mut Vec<Diagnostic>| {
            let prev = extractions.get(feature).and_then(|e| e.value.label().map(str::to_string));
            if prev.as_deref() == Some(label) {
                return;
            }
            extractions.insert(feature.to_string(), FeatureExtraction::label(feature, label, src, 1.0));
            diags.push(
                Diagnostic::new(code, format!("{} -> {label}", prev.as_deref().unwrap_or(UNSPECIFIED)))
                    .feature(feature)
                    .sentence(sentence.index),
            );
        };
        let members = |class: usize| {
            registry.classes()[class]
                .member_features
                .iter()
                .filter_map(|b| registry.cde(&b.cde_id).map(|c| (b.feature_name.as_str(), c)))
        };

        if self.config.bilateral_rule {
            for &class in won {
                if self.has_both_sides(sentence, class) {
                    for (feature, cde) in members(class) {
                        let located = self.targets.get(&cde.cde_id).is_some_and(|t| t.kind == EntityKind::Location);
                        if located && cde.value_by_label("bilateral").is_some() {
                            set(feature, "bilateral", codes::BILATERAL, diags);
                        }
                    }
                }
            }
        }
        if self.config.disjunction_rule {
            let joined = self.disjunct_classes(sentence);
            for &class in won.iter().filter(|c| joined.contains(c)) {
                for (feature, cde) in members(class).filter(|(_, c)| is_presence_like(c)) {
                    if cde.unspecified().is_some() {
                        set(feature, UNSPECIFIED, codes::DISJUNCTION, diags);
                    }
                }
            }
        }
        if self.config.negation_rule {
            let negated = self.negated_classes(sentence);
            for &class in won.iter().filter(|c| negated.contains(c) && !self.typed_classes[**c]) {
                for (feature, _) in members(class).filter(|(_, c)| is_presence_like(c)) {
                    set(feature, ABSENT, codes::NEGATION, diags);
                }
            }
        }
    }

    /// Both "left" and "right" within the window of a mention of the class's finding.
    pub fn has_both_sides(&self, sentence: &SentenceUnit, class: usize) -> bool {
        let spans = self.concept_spans(sentence, class);
        let w = self.config.bilateral_window;
        let near = |p: usize| {
            spans.iter().any(|&(a, b)| {
                let d = if p < a { a - p } else if p >= b { p + 1 - b } else { 0 };
                d <= w
            })
        };
        let side = |s: &str| sentence.stems.iter().enumerate().any(|(i, t)| t == s && near(i));
        !spans.is_empty() && side("left") && side("right")
    }

    /// Classes named on either side of a disjunction connector ("X vs Y").
    pub fn disjunct_classes(&self, sentence: &SentenceUnit) -> HashSet<usize> {
        let concepts: Vec<(usize, usize, usize)> = sentence
            .entities_of(EntityKind::CoreConcept)
            .filter_map(|e| {
                let stems: Vec<&str> = sentence.stems[e.token_start..e.token_end].iter().map(String::as_str).collect();
                let class = self
                    .class_concepts
                    .iter()
                    .position(|p| p.match_at(&stems, 0) == Some(stems.len()))?;
                Some((class, e.start, e.end))
            })
            .collect();
        let mut out = HashSet::new();
        for pair in concepts.windows(2) {
            let ((c1, _, end), (c2, start, _)) = (pair[0], pair[1]);
            if c1 == c2 || start < end {
                continue;
            }
            let between = sentence.text[end..start].trim().to_lowercase();
            if self.config.disjunction_connectors.iter().any(|c| c.to_lowercase() == between) {
                out.insert(c1);
                out.insert(c2);
            }
        }
        out
    }

    /// Classes whose finding follows a negation trigger such as "no new".
    pub fn negated_classes(&self, sentence: &SentenceUnit) -> HashSet<usize> {
        let stems: Vec<&str> = sentence.stems.iter().map(String::as_str).collect();
        let mut out = HashSet::new();
        for i in 0..stems.len() {
            for trig in &self.negation {
                let end = i + trig.len();
                if end > stems.len() || trig.iter().zip(&stems[i..end]).any(|(a, b)| a != b) {
                    continue;
                }
                for j in end..(end + self.config.negation_window).min(stems.len()) {
                    for (c, p) in self.class_concepts.iter().enumerate() {
                        if p.match_at(&stems, j).is_some() {
                            out.insert(c);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Entity texts from exemplars that phrase a value indirectly ("standard position"
/// for adequately positioned). Exemplars already naming a value label contribute
/// nothing, and a usage seen under two different values is dropped.
fn usages(
    feature: &str,
    values: &[ValueTarget],
    kind: EntityKind,
    annotations: &[BTreeMap<String, String>],
    units: &[SentenceUnit],
) -> Vec<(String, String)> {
    let labels: HashSet<String> = values.iter().map(|v| nlp::stem_phrase(&v.label)).collect();
    let mut seen: BTreeMap<String, HashSet<String>> = BTreeMap::new();
    for (ann, unit) in annotations.iter().zip(units) {
        let Some(label) = ann.get(feature) else { continue };
        if is_presence_label(label) {
            continue;
        }
        let ents: Vec<String> = unit.entities_of(kind).map(|e| e.text.to_lowercase()).collect();
        if ents.iter().any(|e| labels.contains(&nlp::stem_phrase(e))) {
            continue;
        }
        for e in ents {
            seen.entry(e).or_default().insert(label.clone());
        }
    }
    seen.into_iter()
        .filter(|(_, ls)| ls.len() == 1)
        .map(|(e, ls)| (ls.into_iter().next().unwrap(), e))
        .collect()
}

/// Number with an adjacent unit attached to the feature's finding.
///
/// "Largest" CDEs take the biggest value after conversion to the canonical
/// unit; others take the number nearest to a mention of the finding, earlier
/// on ties. Returns the value and unit as written.
pub fn extract_numeric(sentence: &SentenceUnit, cde: &CdeDefinition, concepts: &PhraseSet) -> Option<(f64, String)> {
    let units: HashMap<usize, &str> = sentence
        .entities_of(EntityKind::Unit)
        .map(|u| (u.token_start, u.text.as_str()))
        .collect();
    let pairs: Vec<(usize, f64, String)> = sentence
        .entities_of(EntityKind::Number)
        .filter_map(|n| {
            let unit = units.get(&n.token_end)?;
            let value: f64 = n.text.parse().ok()?;
            Some((n.token_start, value, unit.to_lowercase()))
        })
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let canonical = cde.canonical_unit();
    let pick = match cde.aggregate() {
        NumericAggregate::Largest => {
            let mut best: Option<(f64, usize)> = None;
            for (i, (_, v, u)) in pairs.iter().enumerate() {
                if let Ok(c) = convert_unit(*v, u, canonical) {
                    if best.is_none_or(|(b, _)| c > b) {
                        best = Some((c, i));
                    }
                }
            }
            best.map_or(0, |(_, i)| i)
        }
        NumericAggregate::Nearest => {
            let stems: Vec<&str> = sentence.stems.iter().map(String::as_str).collect();
            let spans = concepts.find_all(&stems);
            let dist = |p: usize| {
                spans
                    .iter()
                    .map(|&(a, b)| if p < a { a - p } else if p >= b { p + 1 - b } else { 0 })
                    .min()
                    .unwrap_or(0)
            };
            let compatible = |u: &str| units::dimension(u).is_some() && units::dimension(u) == units::dimension(canonical);
            pairs
                .iter()
                .enumerate()
                .min_by_key(|(i, (p, _, u))| (!compatible(u), dist(*p), *i))
                .map(|(i, _)| i)
                .unwrap_or(0)
        }
    };
    let (_, v, u) = &pairs[pick];
    Some((*v, u.clone()))
}

/// Bind extractions to CDEs in registry order, one assignment per CDE.
pub fn standardize(extractions: &[FeatureExtraction], registry: &Registry) -> Result<Vec<CdeAssignment>, StandardizeError> {
    let mut by_feature: HashMap<&str, &FeatureExtraction> = HashMap::new();
    for e in extractions {
        let f = registry
            .canonical_feature(&e.feature_name)
            .ok_or_else(|| StandardizeError::UnknownFeature(e.feature_name.clone()))?;
        by_feature.insert(f, e);
    }
    registry
        .cdes()
        .iter()
        .map(|cde| {
            let feature = registry.feature_for_cde(&cde.cde_id).unwrap_or(&cde.cde_id);
            let default = FeatureExtraction::default_for(feature, cde);
            let e = by_feature.get(feature).copied().unwrap_or(&default);
            Ok(CdeAssignment {
                cde_id: cde.cde_id.clone(),
                value: resolve(feature, cde, &e.value)?,
                feature: feature.to_string(),
                source_sentence: e.source_sentence,
                confidence: e.confidence,
            })
        })
        .collect()
}

fn resolve(feature: &str, cde: &CdeDefinition, value: &ExtractedValue) -> Result<AssignedValue, StandardizeError> {
    let unit = cde.canonical_unit().to_string();
    match (cde.kind, value) {
        (CdeKind::Categorical, ExtractedValue::Label(l)) => cde
            .value_by_label(l)
            .or_else(|| cde.value_by_code(l.trim()))
            .map(|v| AssignedValue::Code { value_code: v.value_code.clone() })
            .ok_or_else(|| StandardizeError::UnresolvableLabel { feature: feature.into(), label: l.clone() }),
        (CdeKind::Categorical, ExtractedValue::Numeric { .. }) => Err(StandardizeError::KindMismatch {
            feature: feature.into(),
            message: "numeric value for a categorical CDE".into(),
        }),
        (CdeKind::Numeric, ExtractedValue::Numeric { value, unit: u }) => {
            let v = convert_unit(*value, u, &unit).map_err(|source| StandardizeError::Unit { feature: feature.into(), source })?;
            Ok(AssignedValue::Numeric { value: v, unit })
        }
        (CdeKind::Numeric, ExtractedValue::Label(l)) => {
            let l = l.trim();
            if l.eq_ignore_ascii_case(UNSPECIFIED) || l.eq_ignore_ascii_case(ABSENT) {
                return Ok(AssignedValue::Numeric { value: cde.default.as_number().unwrap_or(0.0), unit });
            }
            let (num, u) = split_number(l).ok_or_else(|| StandardizeError::UnresolvableLabel {
                feature: feature.into(),
                label: l.into(),
            })?;
            let u = if u.is_empty() { unit.clone() } else { u };
            let v = convert_unit(num, &u, &unit).map_err(|source| StandardizeError::Unit { feature: feature.into(), source })?;
            Ok(AssignedValue::Numeric { value: v, unit })
        }
    }
}

/// "3", "3.0", "3 mm", "1.2cm" -> number and unit.
pub fn split_number(text: &str) -> Option<(f64, String)> {
    let text = text.trim();
    let end = text
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == '-'))
        .map_or(text.len(), |(i, _)| i);
    let value: f64 = text[..end].parse().ok()?;
    Some((value, text[end..].trim().to_lowercase()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::BuiltinEmbedder;

    fn unit(text: &str) -> SentenceUnit {
        SentenceUnit::from_text(text, &EntityLexicons::shipped())
    }

    fn nodule(r: &Registry) -> (&CdeDefinition, PhraseSet) {
        let c = r.class("pulmonary_nodule").unwrap();
        (r.cde("RDE1302").unwrap(), PhraseSet::new(&c.concept_terms))
    }

    #[test]
    fn numeric_attachment() {
        let r = Registry::chest_xr();
        let (size, concepts) = nodule(&r);
        let s = unit("A tiny 3 mm nonspecific nodule in the left lung base.");
        assert_eq!(extract_numeric(&s, size, &concepts), Some((3.0, "mm".into())));
        assert_eq!(extract_numeric(&unit("The lungs are clear."), size, &concepts), None);
        let s = unit("Two nodules measuring 4 mm and 9 mm.");
        assert_eq!(extract_numeric(&s, size, &concepts), Some((9.0, "mm".into())));
        let s = unit("Nodules measuring 4 mm and 0.6 cm.");
        assert_eq!(extract_numeric(&s, size, &concepts), Some((0.6, "cm".into())));
    }

    #[test]
    fn nearest_number_wins_for_volume() {
        let r = Registry::chest_xr();
        let vol = r.cde("RDE867").unwrap();
        let concepts = PhraseSet::new(&r.class("pericardial_effusion").unwrap().concept_terms);
        let s = unit("Tube 20 cm deep; pericardial effusion of 50 ml.");
        assert_eq!(extract_numeric(&s, vol, &concepts), Some((50.0, "ml".into())));
    }

    #[test]
    fn standardize_binds_every_cde() {
        let r = Registry::chest_xr();
        let out = standardize(&[FeatureExtraction::label("Cardiomegaly", "present", Some(0), 1.0)], &r).unwrap();
        assert_eq!(out.len(), 44);
        let cm = out.iter().find(|a| a.cde_id == "RDE430").unwrap();
        assert_eq!(cm.value.code(), Some("RDE430.1"));
        let defaults = standardize(&[], &r).unwrap();
        let rec = r.default_record();
        for a in &defaults {
            assert_eq!(a.value.render(), rec[&a.cde_id].to_string());
            assert_eq!(a.source_sentence, None);
        }
    }

    #[test]
    fn standardize_rejects_unknown_labels() {
        let r = Registry::chest_xr();
        let err = standardize(&[FeatureExtraction::label("Cardiomegaly", "enormous", None, 0.0)], &r).unwrap_err();
        assert_eq!(
            err,
            StandardizeError::UnresolvableLabel { feature: "Cardiomegaly".into(), label: "enormous".into() }
        );
        let err = standardize(&[FeatureExtraction::label("Nope", "present", None, 0.0)], &r).unwrap_err();
        assert_eq!(err, StandardizeError::UnknownFeature("Nope".into()));
    }

    #[test]
    fn standardize_numeric_labels_and_units() {
        let r = Registry::chest_xr();
        let ex = [
            FeatureExtraction::label("Size_mm_Pulmonary_Nodule", "1.2 cm", None, 0.0),
            FeatureExtraction {
                feature_name: "Volume_Pericardial_Effusion_on_CCTA".into(),
                value: ExtractedValue::Numeric { value: 0.5, unit: "l".into() },
                source_sentence: None,
                confidence: 0.0,
            },
        ];
        let out = standardize(&ex, &r).unwrap();
        let get = |id: &str| out.iter().find(|a| a.cde_id == id).unwrap().value.clone();
        assert_eq!(get("RDE1302"), AssignedValue::Numeric { value: 12.0, unit: "mm".into() });
        assert_eq!(get("RDE867"), AssignedValue::Numeric { value: 500.0, unit: "ml".into() });
    }

    #[test]
    fn split_number_forms() {
        assert_eq!(split_number("3"), Some((3.0, String::new())));
        assert_eq!(split_number("1.2cm"), Some((1.2, "cm".into())));
        assert_eq!(split_number("large"), None);
    }

    fn mapper(r: &Registry) -> (ValueMapper, BuiltinEmbedder) {
        let texts: Vec<&str> = r.exemplars().iter().map(|e| e.sentence.as_str()).collect();
        let b = BuiltinEmbedder::fit(&texts);
        let m = ValueMapper::new(r, r.exemplars(), &b, &EntityLexicons::shipped(), MapperConfig::default()).unwrap();
        (m, b)
    }

    #[test]
    fn categorical_location_from_entity() {
        let r = Registry::chest_xr();
        let (m, b) = mapper(&r);
        let loc = r.cde("RDE1304").unwrap();
        let s = unit("A tiny 3 mm nonspecific nodule in the left lung base.");
        assert_eq!(m.map_categorical(&s, loc, &b).unwrap().unwrap().label, "left lung");
        assert_eq!(m.map_categorical(&unit("A small nodule."), loc, &b).unwrap(), None);
        let side = r.cde("RDESHS01").unwrap();
        let s = unit("Small right pleural effusion.");
        assert_eq!(m.map_categorical(&s, side, &b).unwrap().unwrap().label, "right");
    }

    #[test]
    fn indirect_usage_maps_to_value() {
        let r = Registry::chest_xr();
        let (m, b) = mapper(&r);
        let ett = r.cde("RDE1530").unwrap();
        let s = unit("Endotracheal tube in standard position.");
        assert_eq!(m.map_categorical(&s, ett, &b).unwrap().unwrap().label, "adequately positioned");
    }

    #[test]
    fn rule_detectors() {
        let r = Registry::chest_xr();
        let (m, _) = mapper(&r);
        let pe = r.class_index("pleural_effusion").unwrap();
        assert!(m.has_both_sides(&unit("Small right and left pleural effusions."), pe));
        assert!(!m.has_both_sides(&unit("Small right pleural effusion."), pe));
        let at = r.class_index("atelectasis").unwrap();
        let co = r.class_index("airspace_consolidation").unwrap();
        let d = m.disjunct_classes(&unit("Left basilar atelectasis vs consolidation."));
        assert_eq!(d, HashSet::from([at, co]));
        assert!(m.disjunct_classes(&unit("No pleural effusion or pneumothorax.")).is_empty());
        assert_eq!(m.negated_classes(&unit("There is no new focal consolidation.")), HashSet::from([co]));
        assert!(m.negated_classes(&unit("There is new consolidation.")).is_empty());
    }

    #[test]
    fn presence_needs_exemplars() {
        let mut file = Registry::chest_xr().file().clone();
        file.exemplars.clear();
        let r = Registry::from_file(file).unwrap();
        let b = BuiltinEmbedder::fit(["x"]);
        let m = ValueMapper::new(&r, &[], &b, &EntityLexicons::shipped(), MapperConfig::default()).unwrap();
        let ret = Retriever::new(&r, &[], &b, Default::default(), &[]).unwrap();
        let v = crate::embedding::embed_one(&b, "There is no pleural effusion.").unwrap();
        let err = m.map_presence(&r, &ret, &v, 0, "Endotracheal_tube").unwrap_err();
        assert!(matches!(err, MappingError::NoExemplars(_)));
    }
}
