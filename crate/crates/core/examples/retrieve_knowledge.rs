//! Trains the fixture models and runs three-layer retrieval (stance posts,
//! then comments, then the most fluent sentences) for every hate-speech input.
//!
//! `cargo run --release --example retrieve_knowledge`

use std::path::Path;

use counterspeech::classifier::read_pairs_path;
use counterspeech::corpus;
use counterspeech::pipeline::{read_jsonl, train_models, validate_config, TrainingData};
use counterspeech::retrieve::ssf;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    let cfg = validate_config(dir.join("pipeline.toml")).map_err(|e| anyhow::anyhow!(e.join("; ")))?.config;
    let repo = corpus::ingest_path(dir.join("corpus.jsonl"))?.filter_comments();
    let hs = corpus::read_hs_path(dir.join("hs.jsonl"))?;
    let data = TrainingData {
        stance: read_jsonl(dir.join("stance.jsonl"))?,
        semantic: read_jsonl(dir.join("semantic.jsonl"))?,
        pairs: read_pairs_path(dir.join("pairs.jsonl"))?,
    };
    let models = train_models(&repo, &hs, &data, &cfg.training, &cfg.retrieval.counter_prompt, cfg.seed)?;

    for x in &hs {
        let k = ssf(&repo, x, &cfg.retrieval, models.encoders(), &models.fwd)?;
        println!("\n{} [{}] {}", x.id, x.target, x.text);
        for s in k.sentences.iter().take(3) {
            let fit = s.fit.map_or("inf".to_string(), |f| format!("{f:.1}"));
            println!("  #{} ppl {fit:>6}  {}  ({})", s.rank, s.text, s.provenance());
        }
    }
    Ok(())
}
