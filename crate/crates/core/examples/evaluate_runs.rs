//! Score the pipeline and the LLM baseline on the synthetic corpus, print
//! per-feature F1 side by side and test whether the systems differ.
//!
//! cargo run --release --example evaluate_runs

use radcde::eval::{cross_compare, fisher_exact, mcnemar_exact, per_feature_csv, score_phase, Phase};
use radcde::llm::{LlmBaseline, PromptConfig, ReplayClient};
use radcde::pipeline::{Pipeline, PipelineConfig};
use radcde::record::{grid, read_jsonl, read_reports, ResultRecord};
use radcde::registry::Registry;
use radcde::runner::{run_extraction, run_llm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic");
    let registry = Registry::chest_xr();
    let reports = read_reports(format!("{dir}/reports.jsonl"))?;
    let mut truth: Vec<ResultRecord> = read_jsonl(format!("{dir}/truth.jsonl"))?;
    for t in &mut truth {
        t.complete(&registry)?;
    }

    let pipeline = Pipeline::builtin(registry.clone(), PipelineConfig::default())?;
    let pipe: Vec<ResultRecord> =
        run_extraction(&pipeline, &reports, 4)?.iter().map(|r| ResultRecord::from_extraction(r, "pipeline")).collect();
    let baseline = LlmBaseline::builtin(registry.clone(), PromptConfig::default())?;
    let client = ReplayClient::load(format!("{dir}/replay.json"))?;
    let llm: Vec<ResultRecord> = run_llm(&baseline, &client, &reports, 4)?.iter().map(|r| ResultRecord::from_llm(r, "llm")).collect();

    let phase = Phase::Extraction;
    let t = grid(&truth, phase);
    let a = score_phase(&grid(&pipe, phase), &t, phase, &registry)?;
    let b = score_phase(&grid(&llm, phase), &t, phase, &registry)?;
    println!("{}", per_feature_csv(&[("pipeline", &a), ("llm", &b)]));
    for (name, s) in [("pipeline", &a), ("llm", &b)] {
        println!("{name:<9} P {:.3}  R {:.3}  F1 {:.3}", s.overall.precision, s.overall.recall, s.overall.macro_f1);
    }

    let table = cross_compare(&grid(&pipe, phase), &grid(&llm, phase), &t)?;
    println!("\n{:?}", table.cells());
    println!("Fisher p = {:.3e}, McNemar p = {:.3e}", fisher_exact(&table)?, mcnemar_exact(&table));
    Ok(())
}
