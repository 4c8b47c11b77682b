//! Scoring of extraction and standardization runs against ground truth.

mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{fisher_exact, krippendorff_alpha, mcnemar_exact, ContingencyTable2x2, StatsError};

use crate::registry::{CdeDefinition, CdeKind, Registry, ABSENT, INDETERMINANT, UNSPECIFIED};

/// report_id -> (feature name or cde_id) -> value string.
pub type Grid = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("grids differ: {} cells missing from predictions, {} missing from truth (first: {})", .missing_in_pred.len(), .missing_in_truth.len(), first_cell(.missing_in_pred, .missing_in_truth))]
    Alignment {
        missing_in_pred: Vec<(String, String)>,
        missing_in_truth: Vec<(String, String)>,
    },
    #[error("{0:?} is not a feature or CDE of the registry")]
    UnknownKey(String),
    #[error("nothing to score")]
    Empty,
}

fn first_cell(a: &[(String, String)], b: &[(String, String)]) -> String {
    a.iter().chain(b).next().map(|(r, k)| format!("{r}/{k}")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Extraction,
    Standardization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueClass {
    Positive,
    Absent,
    Unspecified,
}

impl ValueClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueClass::Positive => "positive",
            ValueClass::Absent => "absent",
            ValueClass::Unspecified => "unspecified",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth instances of the class (tp + fn).
    pub instances: u64,
}

impl ClassScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassScore { tp, fp, fn_, precision, recall, f1, instances: tp + fn_ }
    }
}

/// Unweighted means over the reported classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
}

/// Pooled over all instances; with one label per instance precision = recall = accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub phase: Phase,
    /// Classes with at least one ground-truth instance or prediction.
    pub per_class: BTreeMap<ValueClass, ClassScore>,
    /// Macro F1 over each feature's own instances, keyed by feature name.
    pub per_feature: BTreeMap<String, f64>,
    pub overall: MacroScores,
    pub micro: MicroScores,
    pub total_instances: u64,
}

/// Class of a value for scoring: absent, unspecified (also the numeric default and
/// "indeterminant"), or positive for anything else.
pub fn value_class(cde: &CdeDefinition, phase: Phase, value: &str) -> ValueClass {
    let v = value.trim();
    match cde.kind {
        CdeKind::Numeric => match v.parse::<f64>() {
            Ok(x) if Some(x) == cde.default.as_number() => ValueClass::Unspecified,
            Ok(_) => ValueClass::Positive,
            Err(_) if v.eq_ignore_ascii_case(UNSPECIFIED) => ValueClass::Unspecified,
            Err(_) if v.eq_ignore_ascii_case(ABSENT) => ValueClass::Absent,
            Err(_) => ValueClass::Positive,
        },
        CdeKind::Categorical => {
            let label = match phase {
                Phase::Extraction => cde.value_by_label(v).map(|x| x.label.as_str()),
                Phase::Standardization => cde.value_by_code(v).map(|x| x.label.as_str()),
            };
            match label {
                Some(ABSENT) => ValueClass::Absent,
                Some(UNSPECIFIED) | Some(INDETERMINANT) => ValueClass::Unspecified,
                _ => ValueClass::Positive,
            }
        }
    }
}

/// Equality used for "identical match": numbers compare numerically, labels case-insensitively.
pub fn same_value(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.eq_ignore_ascii_case(b),
    }
}

fn cde_for<'r>(registry: &'r Registry, phase: Phase, key: &str) -> Result<(&'r CdeDefinition, String), EvalError> {
    match phase {
        Phase::Extraction => {
            let cde = registry.lookup_feature(key).map_err(|_| EvalError::UnknownKey(key.into()))?;
            let f = registry.canonical_feature(key).unwrap_or(key).to_string();
            Ok((cde, f))
        }
        Phase::Standardization => {
            let cde = registry.cde(key).ok_or_else(|| EvalError::UnknownKey(key.into()))?;
            let f = registry.feature_for_cde(key).unwrap_or(key).to_string();
            Ok((cde, f))
        }
    }
}

/// Check that both grids have the same (report, key) cells.
pub fn check_alignment(pred: &Grid, truth: &Grid) -> Result<(), EvalError> {
    let cells = |g: &Grid| -> Vec<(String, String)> {
        g.iter().flat_map(|(r, m)| m.keys().map(move |k| (r.clone(), k.clone()))).collect()
    };
    let (p, t) = (cells(pred), cells(truth));
    let pset: std::collections::BTreeSet<_> = p.iter().collect();
    let tset: std::collections::BTreeSet<_> = t.iter().collect();
    let missing_in_pred: Vec<_> = t.iter().filter(|c| !pset.contains(c)).cloned().collect();
    let missing_in_truth: Vec<_> = p.iter().filter(|c| !tset.contains(c)).cloned().collect();
    if missing_in_pred.is_empty() && missing_in_truth.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Alignment { missing_in_pred, missing_in_truth })
    }
}

#[derive(Default)]
struct Counts {
    tp: BTreeMap<ValueClass, u64>,
    fp: BTreeMap<ValueClass, u64>,
    fn_: BTreeMap<ValueClass, u64>,
}

impl Counts {
    fn add(&mut self, gold: ValueClass, pred: ValueClass, correct: bool) {
        if correct {
            *self.tp.entry(gold).or_default() += 1;
        } else {
            *self.fn_.entry(gold).or_default() += 1;
            *self.fp.entry(pred).or_default() += 1;
        }
    }

    fn scores(&self) -> BTreeMap<ValueClass, ClassScore> {
        let mut out = BTreeMap::new();
        for c in [ValueClass::Positive, ValueClass::Absent, ValueClass::Unspecified] {
            let get = |m: &BTreeMap<ValueClass, u64>| m.get(&c).copied().unwrap_or(0);
            let (tp, fp, fn_) = (get(&self.tp), get(&self.fp), get(&self.fn_));
            if tp + fp + fn_ > 0 {
                out.insert(c, ClassScore::from_counts(tp, fp, fn_));
            }
        }
        out
    }
}

fn macro_of(per_class: &BTreeMap<ValueClass, ClassScore>) -> MacroScores {
    let n = per_class.len() as f64;
    if n == 0.0 {
        return MacroScores::default();
    }
    MacroScores {
        precision: per_class.values().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.values().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: per_class.values().map(|c| c.f1).sum::<f64>() / n,
    }
}

/// Score one phase. Each instance is classed by its ground-truth value; a wrong
/// prediction counts as a false negative for that class and a false positive
/// for the class of the predicted value.
pub fn score_phase(pred: &Grid, truth: &Grid, phase: Phase, registry: &Registry) -> Result<EvalSummary, EvalError> {
    check_alignment(pred, truth)?;
    let mut all = Counts::default();
    let mut by_feature: BTreeMap<String, Counts> = BTreeMap::new();
    let mut total = 0u64;
    let mut correct = 0u64;
    for (report, cells) in truth {
        for (key, gold) in cells {
            let p = &pred[report][key];
            let (cde, feature) = cde_for(registry, phase, key)?;
            let g = value_class(cde, phase, gold);
            let q = value_class(cde, phase, p);
            let ok = same_value(p, gold);
            all.add(g, q, ok);
            by_feature.entry(feature).or_default().add(g, q, ok);
            total += 1;
            correct += ok as u64;
        }
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let per_class = all.scores();
    let acc = correct as f64 / total as f64;
    Ok(EvalSummary {
        phase,
        overall: macro_of(&per_class),
        per_class,
        per_feature: by_feature.into_iter().map(|(f, c)| (f, macro_of(&c.scores()).macro_f1)).collect(),
        micro: MicroScores { precision: acc, recall: acc, f1: acc, correct },
        total_instances: total,
    })
}

/// Tally paired correctness of two runs on the truth grid.
pub fn cross_compare(run_a: &Grid, run_b: &Grid, truth: &Grid) -> Result<ContingencyTable2x2, EvalError> {
    check_alignment(run_a, truth)?;
    check_alignment(run_b, truth)?;
    let mut t = ContingencyTable2x2::default();
    for (report, cells) in truth {
        for (key, gold) in cells {
            let a = same_value(&run_a[report][key], gold);
            let b = same_value(&run_b[report][key], gold);
            match (a, b) {
                (true, true) => t.both_true += 1,
                (true, false) => t.only_a_true += 1,
                (false, true) => t.only_b_true += 1,
                (false, false) => t.both_false += 1,
            }
        }
    }
    Ok(t)
}

/// `Feature,<system>...` rows of per-feature F1, in the first summary's key order.
pub fn per_feature_csv(systems: &[(&str, &EvalSummary)]) -> String {
    let mut out = String::from("Feature");
    for (name, _) in systems {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    if let Some((_, first)) = systems.first() {
        for feature in first.per_feature.keys() {
            out.push_str(feature);
            for (_, s) in systems {
                match s.per_feature.get(feature) {
                    Some(f1) => write!(out, ",{f1:.4}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[(&str, &str, &str)]) -> Grid {
        let mut g = Grid::new();
        for (r, k, v) in rows {
            g.entry(r.to_string()).or_default().insert(k.to_string(), v.to_string());
        }
        g
    }

    #[test]
    fn toy_three_class_counts() {
        let r = Registry::chest_xr();
        let truth = grid(&[
            ("r1", "Cardiomegaly", "present"),
            ("r1", "Presence_Pneumothorax", "absent"),
            ("r1", "Atelectasis", "absent"),
            ("r1", "Fibrosis", "unspecified"),
            ("r1", "Scoliosis", "unspecified"),
        ]);
        let pred = grid(&[
            ("r1", "Cardiomegaly", "present"),
            ("r1", "Presence_Pneumothorax", "present"),
            ("r1", "Atelectasis", "absent"),
            ("r1", "Fibrosis", "unspecified"),
            ("r1", "Scoliosis", "unspecified"),
        ]);
        let s = score_phase(&pred, &truth, Phase::Extraction, &r).unwrap();
        let pos = s.per_class[&ValueClass::Positive];
        assert_eq!((pos.tp, pos.fp, pos.fn_), (1, 1, 0));
        let abs = s.per_class[&ValueClass::Absent];
        assert_eq!((abs.tp, abs.fp, abs.fn_), (1, 0, 1));
        let uns = s.per_class[&ValueClass::Unspecified];
        assert_eq!((uns.tp, uns.fp, uns.fn_), (2, 0, 0));
        assert!((pos.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((abs.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(uns.f1, 1.0);
        assert!((s.overall.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(s.total_instances, 5);
    }

    #[test]
    fn identical_runs_score_one() {
        let r = Registry::chest_xr();
        let truth = grid(&[("a", "RDE430", "RDE430.1"), ("a", "RDE1302", "4.0"), ("b", "RDE430", "RDE430.2")]);
        let s = score_phase(&truth, &truth, Phase::Standardization, &r).unwrap();
        assert!(s.per_class.values().all(|c| c.f1 == 1.0));
        assert_eq!(s.overall.macro_f1, 1.0);
        assert_eq!(s.per_feature["Size_mm_Pulmonary_Nodule"], 1.0);
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let r = Registry::chest_xr();
        let truth = grid(&[("a", "Cardiomegaly", "present"), ("a", "Fibrosis", "absent")]);
        let pred = grid(&[("a", "Cardiomegaly", "present")]);
        let err = score_phase(&pred, &truth, Phase::Extraction, &r).unwrap_err();
        let EvalError::Alignment { missing_in_pred, .. } = err else { panic!() };
        assert_eq!(missing_in_pred, vec![("a".to_string(), "Fibrosis".to_string())]);
    }

    #[test]
    fn numeric_classes() {
        let r = Registry::chest_xr();
        let size = r.cde("RDE1302").unwrap();
        assert_eq!(value_class(size, Phase::Extraction, "0.0"), ValueClass::Unspecified);
        assert_eq!(value_class(size, Phase::Extraction, "3.0"), ValueClass::Positive);
        assert!(same_value("3", "3.0"));
        assert!(!same_value("3", "4"));
    }

    #[test]
    fn compare_cells() {
        let truth = grid(&[("a", "x", "1"), ("a", "y", "2"), ("b", "x", "3"), ("b", "y", "4")]);
        let wrong = grid(&[("a", "x", "0"), ("a", "y", "0"), ("b", "x", "0"), ("b", "y", "0")]);
        assert_eq!(cross_compare(&truth, &truth, &truth).unwrap(), ContingencyTable2x2::new(4, 0, 0, 0));
        assert_eq!(cross_compare(&truth, &wrong, &truth).unwrap(), ContingencyTable2x2::new(0, 4, 0, 0));
    }

    #[test]
    fn csv_layout() {
        let r = Registry::chest_xr();
        let truth = grid(&[("a", "Cardiomegaly", "present")]);
        let s = score_phase(&truth, &truth, Phase::Extraction, &r).unwrap();
        assert_eq!(per_feature_csv(&[("radcde", &s)]), "Feature,radcde\nCardiomegaly,1.0000\n");
    }
}
