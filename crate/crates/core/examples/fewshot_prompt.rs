//! Build the few-shot prompt for a report and list the retrieved example pairs.
//!
//! cargo run --example fewshot_prompt [-- <threshold>]

use radcde::data::NORMAL_REPORT;
use radcde::llm::{LlmBaseline, PromptConfig};
use radcde::registry::Registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let threshold = std::env::args().nth(1).map(|t| t.parse()).transpose()?.unwrap_or(0.9);
    let baseline = LlmBaseline::builtin(Registry::chest_xr(), PromptConfig { threshold, ..Default::default() })?;
    let bundle = baseline.prompt("normal", NORMAL_REPORT)?;
    println!("{}\n", bundle.text());
    println!("{} example pairs, about {} tokens", bundle.fewshot_block.len(), bundle.token_estimate);
    for pair in &bundle.fewshot_block {
        println!("  {:.3}  {}", pair.similarity, pair.sentence);
    }
    Ok(())
}
