//! Rebuild the bundled synthetic corpus: reports, ground truth and canned LLM replies.
//!
//! cargo run --example regenerate_synthetic [-- <out-dir>]

use radcde::llm::{LlmBaseline, PromptConfig};
use radcde::record::{to_jsonl, write_atomic};
use radcde::registry::Registry;
use radcde::synthetic::{canned_replay, generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic").into());
    std::fs::create_dir_all(&dir)?;
    let registry = Registry::chest_xr();
    let cfg = SyntheticConfig::default();
    let corpus = generate(&registry, &cfg)?;
    let baseline = LlmBaseline::builtin(registry, PromptConfig::default())?;
    let replay = canned_replay(&baseline, &corpus, cfg.seed)?;
    write_atomic(format!("{dir}/reports.jsonl"), &to_jsonl(&corpus.reports))?;
    write_atomic(format!("{dir}/truth.jsonl"), &to_jsonl(&corpus.truth))?;
    write_atomic(format!("{dir}/replay.json"), &replay.to_json())?;
    println!("{} reports written to {dir}", corpus.reports.len());
    Ok(())
}
