//! List the feature values no human exemplar covers and the template sentences
//! generated to fill them.
//!
//! cargo run --example augmentation

use radcde::augment::{augmented_corpus, uncovered_pairs, TemplateSet};
use radcde::registry::{ExampleSource, Registry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = Registry::chest_xr();
    let human: Vec<_> = registry.exemplars().iter().filter(|e| e.source == ExampleSource::Human).cloned().collect();
    let gaps = uncovered_pairs(&registry, &human);
    println!("{} human exemplars leave {} feature values uncovered\n", human.len(), gaps.len());

    let corpus = augmented_corpus(&registry, &TemplateSet::shipped())?;
    for e in corpus.iter().filter(|e| e.source == ExampleSource::Augmented) {
        let (feature, value) = e.feature_values.iter().next().expect("augmented sentences carry one value");
        println!("{feature}={value:<12} {}", e.sentence);
    }
    let left = uncovered_pairs(&registry, &corpus);
    println!("\n{} feature values still uncovered after augmentation", left.len());
    Ok(())
}
