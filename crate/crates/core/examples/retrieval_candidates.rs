//! Show the lexical and semantic scores behind candidate class selection, and
//! how the candidate set shrinks as the semantic threshold rises. The whole
//! sentence is embedded at once, so a compound sentence scores lower against
//! each single-finding exemplar than either half would.
//!
//! cargo run --example retrieval_candidates [-- "<sentence>"]

use radcde::embedding::embed;
use radcde::parser::SentenceUnit;
use radcde::pipeline::{Pipeline, PipelineConfig};
use radcde::registry::Registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sentence = std::env::args().nth(1).unwrap_or_else(|| "Small left pleural effusion with adjacent atelectasis.".into());
    let pipeline = Pipeline::builtin(Registry::chest_xr(), PipelineConfig::default())?;
    let registry = pipeline.registry();
    let unit = &SentenceUnit::from_text(&sentence, &pipeline.parser().lexicons);
    let stems = pipeline.retriever().query_stems(unit);
    println!("query stems: {stems:?}\n");

    let vector = embed(pipeline.backend(), &[unit.text.as_str()])?.remove(0);
    let scores = pipeline.retriever().score_classes(unit, &vector)?;
    let mut ranked: Vec<_> = scores.iter().collect();
    ranked.sort_by(|a, b| b.semantic_score.total_cmp(&a.semantic_score));
    println!("{:<28} {:>8} {:>8}  best exemplar", "class", "bm25", "cosine");
    for s in ranked.iter().take(10) {
        let class = &registry.classes()[s.class];
        let exemplar = &pipeline.corpus()[s.best_exemplar].sentence;
        println!("{:<28} {:>8.3} {:>8.3}  {exemplar}", class.class_id, s.lexical_score, s.semantic_score);
    }
    println!();
    for t in [0.5, 0.7, 0.8, 0.9, 0.95] {
        let set = pipeline.retriever().select_candidates(unit, &vector, t)?;
        println!("threshold {t:.2}: {:?}", set.class_ids());
    }
    Ok(())
}
