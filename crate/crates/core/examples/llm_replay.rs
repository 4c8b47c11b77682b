//! Run the LLM baseline over the bundled synthetic reports using recorded
//! replies, then show what the response parser made of one of them.
//!
//! cargo run --example llm_replay

use radcde::eval::{score_phase, Phase};
use radcde::llm::{LlmBaseline, PromptConfig, ReplayClient};
use radcde::record::{grid, read_jsonl, read_reports, ResultRecord};
use radcde::registry::Registry;
use radcde::runner::run_llm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic");
    let registry = Registry::chest_xr();
    let reports = read_reports(format!("{dir}/reports.jsonl"))?;
    let mut truth: Vec<ResultRecord> = read_jsonl(format!("{dir}/truth.jsonl"))?;
    for t in &mut truth {
        t.complete(&registry)?;
    }
    let client = ReplayClient::load(format!("{dir}/replay.json"))?;
    let baseline = LlmBaseline::builtin(registry.clone(), PromptConfig::default())?;
    let results = run_llm(&baseline, &client, &reports, 4)?;

    let first = &results[0];
    println!("{}\n--- reply ---\n{}\n", reports[0].text, first.response.raw_text);
    for u in &first.response.unparsed_lines {
        println!("unparsed line {} ({}): {}", u.line, u.reason.code(), u.text);
    }
    for s in &first.standardization {
        let a = &s.assignment;
        println!("{}: {} -> {} {} (cde cosine {:.3})", s.feature_name, s.value, a.cde_id, a.value.render(), s.cde_similarity);
    }

    let records: Vec<ResultRecord> = results.iter().map(|r| ResultRecord::from_llm(r, "llm")).collect();
    for phase in [Phase::Extraction, Phase::Standardization] {
        let s = score_phase(&grid(&records, phase), &grid(&truth, phase), phase, &registry)?;
        println!("{phase:?}: macro F1 {:.3} over {} instances", s.overall.macro_f1, s.total_instances);
    }
    Ok(())
}
