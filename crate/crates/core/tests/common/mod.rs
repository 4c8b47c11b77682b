//! Oracles and generators shared by the property tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use radcde::eval::{score_phase, Grid, Phase, ValueClass};
use radcde::parser::SentenceUnit;
use radcde::pipeline::{Pipeline, PipelineConfig};
use radcde::registry::{CdeKind, Registry};
use radcde::retrieval::{resolve_collisions, Candidate, CandidateSet};

pub fn choose(n: u64, k: u64) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
    }
    r
}

/// Two-sided Fisher p by listing every table with the observed margins, in exact integers.
pub fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = a + b + c + d;
    let (r1, c1) = (a + b, a + c);
    let weight = |x: u64| choose(c1, x) * choose(n - c1, r1 - x);
    let observed = weight(a);
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let tail: u128 = (lo..=hi).map(weight).filter(|w| *w <= observed).sum();
    tail as f64 / choose(n, r1) as f64
}

/// Every 2x2 table with 1 <= total <= `max`.
pub fn all_tables(max: u64) -> Vec<[u64; 4]> {
    let mut out = Vec::new();
    for n in 1..=max {
        for a in 0..=n {
            for b in 0..=n - a {
                for c in 0..=n - a - b {
                    out.push([a, b, c, n - a - b - c]);
                }
            }
        }
    }
    out
}

/// Nominal alpha fixtures with values computed in exact rational arithmetic from
/// the pairwise definition of observed and expected disagreement.
pub fn alpha_fixtures() -> Vec<(&'static str, Vec<Vec<Option<String>>>, f64)> {
    let parse = |rows: &[&str]| -> Vec<Vec<Option<String>>> {
        rows.iter()
            .map(|r| r.split_whitespace().map(|v| (v != ".").then(|| v.to_string())).collect())
            .collect()
    };
    vec![
        (
            "four coders, twelve units",
            parse(&[
                "1 2 3 3 2 1 4 1 2 . . .",
                "1 2 3 3 2 2 4 1 2 5 . 3",
                ". 3 3 3 2 3 4 2 2 5 1 .",
                "1 2 3 3 2 4 4 1 2 5 1 .",
            ]),
            113.0 / 152.0,
        ),
        ("three coders with gaps", parse(&["a a b b c .", "a b b b c c", "a a b . a c"]), 9.0 / 14.0),
        ("two coders, binary", parse(&["0 1 0 0 1 1 0 1 0 0", "0 1 1 0 1 0 0 1 0 1"]), 14.0 / 33.0),
    ]
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Class {
    Positive,
    Absent,
    Unspecified,
}

/// One renderable value of a CDE with its class decided up front.
#[derive(Clone, Debug)]
pub struct Choice {
    label: String,
    code: String,
    class: Class,
}

pub fn choices(registry: &Registry) -> Vec<(String, String, Vec<Choice>)> {
    registry
        .cdes()
        .iter()
        .filter_map(|cde| {
            let feature = registry.feature_for_cde(&cde.cde_id)?.to_string();
            let list = match cde.kind {
                CdeKind::Numeric => ["0.0", "3.0", "12.5", "40.0"]
                    .iter()
                    .map(|v| Choice {
                        label: v.to_string(),
                        code: v.to_string(),
                        class: if *v == "0.0" { Class::Unspecified } else { Class::Positive },
                    })
                    .collect(),
                CdeKind::Categorical => cde
                    .value_set
                    .iter()
                    .map(|v| Choice {
                        label: v.label.clone(),
                        code: v.value_code.clone(),
                        class: match v.label.as_str() {
                            "absent" => Class::Absent,
                            "unspecified" | "indeterminant" => Class::Unspecified,
                            _ => Class::Positive,
                        },
                    })
                    .collect(),
            };
            Some((feature, cde.cde_id.clone(), list))
        })
        .collect()
}

pub struct Expected {
    counts: BTreeMap<&'static str, (u64, u64, u64)>,
    correct: u64,
    total: u64,
}

pub fn name(c: Class) -> &'static str {
    match c {
        Class::Positive => "positive",
        Class::Absent => "absent",
        Class::Unspecified => "unspecified",
    }
}

pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn reg() -> &'static Registry {
    static R: std::sync::OnceLock<Registry> = std::sync::OnceLock::new();
    R.get_or_init(Registry::chest_xr)
}

/// Per cell: gold choice, prediction mode (0 copy, 1 copy with case change, 2 random), random choice.
pub fn metric_cells() -> impl Strategy<Value = Vec<Vec<(usize, u8, usize)>>> {
    prop::collection::vec(prop::collection::vec((0usize..16, 0u8..3, 0usize..16), 44), 1..=20)
}

pub fn check_metric(rows: &[Vec<(usize, u8, usize)>], phase: Phase) -> Result<(), TestCaseError> {
    let registry = reg();
    let table = choices(registry);
    prop_assert_eq!(table.len(), 44);
    let mut pred: Grid = BTreeMap::new();
    let mut truth: Grid = BTreeMap::new();
    let mut instances: Vec<(Class, Class, bool)> = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let report = format!("r{r:02}");
        for ((feature, cde_id, list), &(g, mode, q)) in table.iter().zip(row) {
            let gold = &list[g % list.len()];
            let other = &list[q % list.len()];
            let render = |c: &Choice| match phase {
                Phase::Extraction => c.label.clone(),
                Phase::Standardization => c.code.clone(),
            };
            let (p_text, p_choice) = match mode {
                0 => (render(gold), gold),
                1 => (render(gold).to_uppercase(), gold),
                _ => (render(other), other),
            };
            let key = match phase {
                Phase::Extraction => feature.clone(),
                Phase::Standardization => cde_id.clone(),
            };
            let correct = std::ptr::eq(p_choice, gold) || p_choice.code == gold.code;
            instances.push((gold.class, p_choice.class, correct));
            truth.entry(report.clone()).or_default().insert(key.clone(), render(gold));
            pred.entry(report.clone()).or_default().insert(key, p_text);
        }
    }
    let mut exp = Expected { counts: BTreeMap::new(), correct: 0, total: instances.len() as u64 };
    for c in [Class::Positive, Class::Absent, Class::Unspecified] {
        let tp = instances.iter().filter(|(g, _, ok)| *g == c && *ok).count() as u64;
        let fn_ = instances.iter().filter(|(g, _, ok)| *g == c && !*ok).count() as u64;
        let fp = instances.iter().filter(|(_, p, ok)| *p == c && !*ok).count() as u64;
        if tp + fp + fn_ > 0 {
            exp.counts.insert(name(c), (tp, fp, fn_));
        }
    }
    exp.correct = instances.iter().filter(|x| x.2).count() as u64;

    let s = score_phase(&pred, &truth, phase, registry).unwrap();
    prop_assert_eq!(s.total_instances, exp.total);
    prop_assert_eq!(s.micro.correct, exp.correct);
    let got: BTreeMap<&str, (u64, u64, u64)> = s
        .per_class
        .iter()
        .map(|(c, v): (&ValueClass, _)| (c.as_str(), (v.tp, v.fp, v.fn_)))
        .collect();
    prop_assert_eq!(&got, &exp.counts);
    let macro_f1 = exp.counts.values().map(|&(tp, fp, fn_)| f1(tp, fp, fn_)).sum::<f64>() / exp.counts.len() as f64;
    prop_assert!((s.overall.macro_f1 - macro_f1).abs() < 1e-12);
    for (c, v) in &s.per_class {
        let (tp, fp, fn_) = exp.counts[c.as_str()];
        prop_assert!((v.f1 - f1(tp, fp, fn_)).abs() < 1e-12);
    }
    Ok(())
}

pub fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| Pipeline::builtin(Registry::chest_xr(), PipelineConfig::default()).unwrap())
}

pub fn vocabulary() -> &'static Vec<String> {
    static V: OnceLock<Vec<String>> = OnceLock::new();
    V.get_or_init(|| {
        let words: BTreeSet<String> = pipeline()
            .corpus()
            .iter()
            .flat_map(|e| e.sentence.split_whitespace().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()))
            .filter(|w| !w.is_empty())
            .collect();
        words.into_iter().collect()
    })
}

pub fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(any::<prop::sample::Index>(), 2..12)
        .prop_map(|ix| ix.iter().map(|i| i.get(vocabulary()).as_str()).collect::<Vec<_>>().join(" ") + ".")
}

pub fn ids(set: &CandidateSet) -> BTreeSet<String> {
    set.candidates.iter().map(|c| c.class_id.clone()).collect()
}

pub fn candidate_sets() -> impl Strategy<Value = Vec<Vec<(u8, u8)>>> {
    // (class 0..6, score step 0..8) per candidate; scores coarse so ties happen.
    prop::collection::vec(prop::collection::vec((0u8..6, 0u8..8), 0..6), 1..8)
}

pub fn build_sets(raw: &[Vec<(u8, u8)>]) -> Vec<CandidateSet> {
    raw.iter()
        .enumerate()
        .map(|(i, cands)| {
            let mut seen = BTreeSet::new();
            CandidateSet {
                sentence_ref: i,
                threshold: 0.9,
                candidates: cands
                    .iter()
                    .filter(|(c, _)| seen.insert(*c))
                    .map(|&(c, s)| Candidate {
                        class_id: format!("class{c}"),
                        lexical_score: 1.0,
                        semantic_score: 0.9 + f64::from(s) * 0.0125,
                        best_exemplar: 0,
                    })
                    .collect(),
            }
        })
        .collect()
}


/// Candidates at the higher threshold are a subset of those at the lower one.
pub fn check_threshold_monotone(text: &str, t1: f64, dt: f64) -> Result<(), TestCaseError> {
    let p = pipeline();
    let t2 = (t1 + dt).min(1.0);
    let unit = SentenceUnit::from_text(text, &p.parser().lexicons);
    let v = radcde::embedding::embed_one(p.backend(), text).unwrap();
    let low = p.retriever().select_candidates(&unit, &v, t1).unwrap();
    let high = p.retriever().select_candidates(&unit, &v, t2).unwrap();
    prop_assert!(ids(&high).is_subset(&ids(&low)));
    prop_assert!(low.candidates.iter().all(|c| c.semantic_score >= t1));
    Ok(())
}

/// Every class goes to exactly one sentence: the best-scoring, earliest on ties.
pub fn check_collisions(raw: &[Vec<(u8, u8)>]) -> Result<(), TestCaseError> {
    let sets = build_sets(raw);
    let out = resolve_collisions(&sets);
    let all: BTreeSet<String> = sets.iter().flat_map(ids).collect();
    prop_assert_eq!(out.keys().cloned().collect::<BTreeSet<_>>(), all);
    for (class, &winner) in &out {
        let scores: Vec<(usize, f64)> = sets
            .iter()
            .filter_map(|s| s.get(class).map(|c| (s.sentence_ref, c.semantic_score)))
            .collect();
        let best = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let first_best = scores.iter().find(|x| x.1 == best).unwrap().0;
        prop_assert_eq!(winner, first_best);
    }
    Ok(())
}
