//! A single nodule sentence against the small four-CDE nodule registry.
//!
//! cargo run --example nodule_sentence [-- "<sentence>"]

use radcde::data::REGISTRY_RDES195;
use radcde::pipeline::{Pipeline, PipelineConfig};
use radcde::registry::Registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sentence = std::env::args().nth(1).unwrap_or_else(|| "A tiny 3 mm nonspecific nodule in the left lung base".into());
    let registry = Registry::from_json(REGISTRY_RDES195)?;
    let pipeline = Pipeline::builtin(registry, PipelineConfig::default())?;
    let result = pipeline.extract_sentence("nodule", &sentence)?;
    println!("{sentence}\n");
    for e in &result.extractions {
        println!("{:<32} {}", e.feature_name, e.value.render());
    }
    println!();
    for a in &result.assignments {
        let cde = pipeline.registry().cde(&a.cde_id).expect("assigned CDE is registered");
        let label = a.value.code().and_then(|c| cde.value_by_code(c)).map_or(String::new(), |v| v.label.clone());
        println!("{:<8} {:<32} {:<10} {label}", a.cde_id, cde.display_name, a.value.render());
    }
    Ok(())
}
