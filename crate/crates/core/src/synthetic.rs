//! Seeded synthetic reports with ground truth and canned LLM responses.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{LlmBaseline, LlmError, ReplayClient};
use crate::record::{RecordError, ReportInput, ResultRecord};
use crate::registry::{AnnotatedExample, ExampleSource, Registry, UNSPECIFIED};

pub const DEFAULT_SEED: u64 = 20230801;

const INDICATIONS: &[&str] = &["Cough.", "Shortness of breath.", "Chest pain.", "Fever.", "Preoperative evaluation.", "Follow-up."];

/// Sentences that no exemplar resembles.
const NOISE: &[&str] = &[
    "Comparison is made with the prior study.",
    "Overlying monitoring leads are noted.",
    "Surgical clips project over the upper abdomen.",
    "The visualized soft tissues are unremarkable.",
    "Degenerative changes of the thoracic spine.",
    "Frontal and lateral views were obtained.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub reports: usize,
    pub min_findings: usize,
    pub max_findings: usize,
    /// Chance of adding a noise sentence after each finding.
    pub noise_rate: f64,
    /// Chance that a varied measurement is pushed outside the CDE bounds.
    pub out_of_bounds_rate: f64,
    /// Chance that a varied length is written in cm.
    pub cm_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: DEFAULT_SEED,
            reports: 100,
            min_findings: 2,
            max_findings: 6,
            noise_rate: 0.25,
            out_of_bounds_rate: 0.15,
            cm_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub reports: Vec<ReportInput>,
    /// Completed against the registry: every feature and CDE present.
    pub truth: Vec<ResultRecord>,
}

fn number_re() -> Regex {
    Regex::new(r"(\d+(?:\.\d+)?)\s*(mm|cm|ml)\b").expect("valid regex")
}

/// Re-draw the measurement of an exemplar that annotates a numeric feature.
fn vary(ex: &AnnotatedExample, registry: &Registry, rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> AnnotatedExample {
    let mut out = ex.clone();
    let numeric: Vec<&String> = ex
        .feature_values
        .keys()
        .filter(|f| registry.lookup_feature(f).is_ok_and(|c| c.is_numeric()))
        .collect();
    let [feature] = numeric.as_slice() else { return out };
    let cde = registry.lookup_feature(feature).expect("checked");
    let re = number_re();
    let Some(m) = re.captures(&ex.sentence) else { return out };
    let [lo, hi] = cde.bounds.unwrap_or([0.0, 0.0]);
    let oob = rng.random_bool(cfg.out_of_bounds_rate);
    let value: u32 = if oob {
        rng.random_range(hi as u32 + 100..=hi as u32 * 2 + 100)
    } else if cde.canonical_unit() == "mm" {
        rng.random_range(2..=30)
    } else {
        rng.random_range((lo as u32 + 10)..=500)
    };
    let text = if cde.canonical_unit() == "mm" && !oob && rng.random_bool(cfg.cm_rate) {
        format!("{:.1} cm", value as f64 / 10.0)
    } else {
        format!("{value} {}", cde.canonical_unit())
    };
    let whole = m.get(0).expect("match");
    out.sentence = format!("{}{}{}", &ex.sentence[..whole.start()], text, &ex.sentence[whole.end()..]);
    let truth = if oob { cde.default.as_number().unwrap_or(0.0) } else { value as f64 };
    out.feature_values.insert(feature.to_string(), format!("{truth:?}"));
    out
}

/// Reports built from human exemplar sentences, at most one per feature class,
/// with varied measurements and unrelated filler sentences.
pub fn generate(registry: &Registry, cfg: &SyntheticConfig) -> Result<SyntheticCorpus, RecordError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<&AnnotatedExample> = registry.exemplars().iter().filter(|e| e.source == ExampleSource::Human).collect();
    let mut reports = Vec::new();
    let mut truth = Vec::new();
    for i in 0..cfg.reports {
        let want = rng.random_range(cfg.min_findings..=cfg.max_findings.max(cfg.min_findings));
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut used: BTreeSet<usize> = BTreeSet::new();
        let mut sentences = Vec::new();
        let mut features: BTreeMap<String, String> = BTreeMap::new();
        for idx in order {
            if sentences.len() >= want {
                break;
            }
            let ex = pool[idx];
            let classes = registry.exemplar_classes(ex);
            if classes.is_empty() || classes.iter().any(|c| used.contains(c)) {
                continue;
            }
            used.extend(classes);
            let ex = vary(ex, registry, &mut rng, cfg);
            for (f, v) in &ex.feature_values {
                if let Some(f) = registry.canonical_feature(f) {
                    features.insert(f.to_string(), v.clone());
                }
            }
            sentences.push(ex.sentence);
            if rng.random_bool(cfg.noise_rate) {
                sentences.push(NOISE.choose(&mut rng).expect("non-empty").to_string());
            }
        }
        let report_id = format!("syn-{i:04}");
        let indication = INDICATIONS.choose(&mut rng).expect("non-empty");
        reports.push(ReportInput {
            report_id: report_id.clone(),
            text: format!("INDICATION: {indication}\nFINDINGS: {}", sentences.join(" ")),
        });
        let mut rec = ResultRecord {
            report_id,
            system: "truth".into(),
            features,
            assignments: BTreeMap::new(),
            diagnostics: vec![],
            manifest_digest: None,
        };
        rec.complete(registry)?;
        truth.push(rec);
    }
    Ok(SyntheticCorpus { reports, truth })
}

/// A plausible model reply for one report: truth values written as key:value
/// lines, with some dropped findings, filler lines and out-of-set values.
pub fn canned_response(registry: &Registry, truth: &ResultRecord, rng: &mut ChaCha8Rng) -> String {
    let mut lines = Vec::new();
    if rng.random_bool(0.3) {
        lines.push("Here are the extracted features:".to_string());
    }
    for cde in registry.cdes() {
        let Some(feature) = registry.feature_for_cde(&cde.cde_id) else { continue };
        let key = registry.binding(feature).map_or(feature, |b| b.prompt_key());
        let value = &truth.features[feature];
        let default = crate::mapper::FeatureExtraction::default_for(feature, cde).value.render();
        if *value == default {
            if rng.random_bool(0.1) {
                lines.push(format!("{key}: {UNSPECIFIED}"));
            }
            continue;
        }
        let written = if cde.is_numeric() {
            format!("{value} {}", cde.canonical_unit())
        } else if rng.random_bool(0.15) {
            UNSPECIFIED.to_string()
        } else {
            value.clone()
        };
        lines.push(format!("{key}: {written}"));
    }
    if rng.random_bool(0.2) {
        lines.push("Cardiomegaly_Cardiomegaly: borderline".to_string());
    }
    lines.shuffle(rng);
    lines.join("\n")
}

/// Replay entries for the baseline's prompts over the corpus.
pub fn canned_replay(baseline: &LlmBaseline, corpus: &SyntheticCorpus, seed: u64) -> Result<ReplayClient, LlmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut pairs = Vec::new();
    for (report, truth) in corpus.reports.iter().zip(&corpus.truth) {
        let prompt = baseline.prompt(&report.report_id, &report.text)?.text();
        pairs.push((prompt, canned_response(baseline.registry(), truth, &mut rng)));
    }
    Ok(ReplayClient::from_prompts(pairs))
}
