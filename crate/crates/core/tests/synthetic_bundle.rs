//! The bundled synthetic corpus matches what the generator produces today.

use radcde::llm::{LlmBaseline, PromptConfig};
use radcde::record::to_jsonl;
use radcde::registry::Registry;
use radcde::synthetic::{canned_replay, generate, SyntheticConfig};

fn bundled(name: &str) -> String {
    std::fs::read_to_string(format!("{}/data/synthetic/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn bundle_is_up_to_date() {
    let registry = Registry::chest_xr();
    let cfg = SyntheticConfig::default();
    let corpus = generate(&registry, &cfg).unwrap();
    let hint = "run `cargo run --example regenerate_synthetic`";
    assert_eq!(to_jsonl(&corpus.reports), bundled("reports.jsonl"), "{hint}");
    assert_eq!(to_jsonl(&corpus.truth), bundled("truth.jsonl"), "{hint}");
    let baseline = LlmBaseline::builtin(registry, PromptConfig::default()).unwrap();
    assert_eq!(canned_replay(&baseline, &corpus, cfg.seed).unwrap().to_json(), bundled("replay.json"), "{hint}");
}

#[test]
fn truth_is_complete_and_varied() {
    let registry = Registry::chest_xr();
    let corpus = generate(&registry, &SyntheticConfig::default()).unwrap();
    assert_eq!(corpus.truth.len(), 100);
    for t in &corpus.truth {
        assert_eq!(t.features.len(), 44);
        assert_eq!(t.assignments.len(), 44);
    }
    let non_default: usize = corpus
        .truth
        .iter()
        .map(|t| t.assignments.iter().filter(|(c, v)| registry.default_value(registry.cde(c).unwrap()).to_string() != v.render()).count())
        .sum();
    assert!(non_default > 200, "{non_default}");
}
