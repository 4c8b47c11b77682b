//! BM25 golden values and randomized properties of candidate selection.

mod common;

use proptest::prelude::*;
use radcde::retrieval::{filter_candidates, Bm25Index, Bm25Params, ClassScore};

fn doc(text: &str) -> (Vec<String>, Vec<String>) {
    (text.split_whitespace().map(String::from).collect(), vec![])
}

#[test]
fn okapi_two_document_golden() {
    let idx = Bm25Index::build([doc("a b"), doc("a a b")], Bm25Params { k1: 1.2, b: 0.75 }).unwrap();
    let scores = idx.score(&["a"]);
    // idf = ln(1 + 0.5/2.5); avgdl = 2.5
    let by_id: std::collections::BTreeMap<usize, f64> = scores.into_iter().collect();
    assert!((by_id[&0] - 0.198_568_032_152_212_4).abs() < 1e-9, "{}", by_id[&0]);
    assert!((by_id[&1] - 0.237_341_671_566_448_4).abs() < 1e-9, "{}", by_id[&1]);
    assert!(idx.score(&["z"]).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn raising_threshold_never_adds_candidates(text in common::sentence(), t1 in 0.0f64..=1.0, dt in 0.0f64..=1.0) {
        common::check_threshold_monotone(&text, t1, dt)?;
    }

    #[test]
    fn filter_is_monotone_in_threshold(scores in prop::collection::vec(0.0f64..=1.0, 0..20), t1 in 0.0f64..=1.0, dt in 0.0f64..=1.0) {
        let class_ids: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
        let cs: Vec<ClassScore> = scores.iter().enumerate()
            .map(|(i, &s)| ClassScore { class: i, lexical_score: 1.0, semantic_score: s, best_exemplar: 0 })
            .collect();
        let low = filter_candidates(0, &cs, &class_ids, t1);
        let high = filter_candidates(0, &cs, &class_ids, t1 + dt);
        prop_assert!(common::ids(&high).is_subset(&common::ids(&low)));
        prop_assert!(low.candidates.iter().all(|c| c.semantic_score >= t1));
    }

    #[test]
    fn collisions_give_each_class_one_best_sentence(raw in common::candidate_sets()) {
        common::check_collisions(&raw)?;
    }

    #[test]
    fn bm25_grows_with_term_frequency(docs in prop::collection::vec(prop::collection::vec(0u8..5, 1..8), 2..6), which in any::<prop::sample::Index>()) {
        // Swap one non-query token for the query term in a document that already has it;
        // lengths and document frequencies stay fixed.
        let render = |d: &Vec<u8>| d.iter().map(|t| format!("t{t}")).collect::<Vec<_>>();
        let base: Vec<Vec<String>> = docs.iter().map(render).collect();
        let target = which.index(base.len());
        prop_assume!(base[target].iter().any(|t| t == "t0") && base[target].iter().any(|t| t != "t0"));
        let mut bumped = base.clone();
        let slot = bumped[target].iter().position(|t| t != "t0").unwrap();
        bumped[target][slot] = "t0".into();
        let score = |ds: &Vec<Vec<String>>| {
            let idx = Bm25Index::build(ds.iter().map(|d| (d.clone(), vec![])), Bm25Params::default()).unwrap();
            idx.score(&["t0"]).into_iter().find(|(i, _)| *i == target).map_or(0.0, |x| x.1)
        };
        prop_assert!(score(&bumped) >= score(&base));
    }
}
