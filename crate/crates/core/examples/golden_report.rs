//! Run the bundled normal chest radiograph report through the pipeline and
//! print every CDE assignment with the sentence it came from.
//!
//! cargo run --example golden_report

use radcde::data::NORMAL_REPORT;
use radcde::pipeline::{Pipeline, PipelineConfig};
use radcde::registry::Registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pipeline = Pipeline::builtin(Registry::chest_xr(), PipelineConfig::default())?;
    let result = pipeline.extract("normal", NORMAL_REPORT)?;
    for (i, s) in result.sentences.iter().enumerate() {
        println!("[{i}] {s}");
    }
    println!();
    for a in &result.assignments {
        let source = a.source_sentence.map_or("default".to_string(), |s| format!("sentence {s}"));
        println!("{:<8} {:<12} {:<45} {source}", a.cde_id, a.value.render(), a.feature);
    }
    for d in &result.diagnostics {
        println!("diagnostic {}: {}", d.code, d.message);
    }
    Ok(())
}
