//! Retrieves counter-knowledge for one input and decodes a response with
//! Langevin dynamics, printing the energy trajectory.
//!
//! `cargo run --release --example langevin_decode [hs-index]`

use std::path::Path;

use counterspeech::classifier::read_pairs_path;
use counterspeech::corpus;
use counterspeech::pipeline::{generate_one, read_jsonl, stage_seed, train_models, validate_config, TrainingData};

fn main() -> anyhow::Result<()> {
    let which: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(0);
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

    let x = hs.get(which).ok_or_else(|| anyhow::anyhow!("only {} inputs", hs.len()))?;
    let decoder = counterspeech::decoder::DecoderConfig { seed: stage_seed(cfg.seed, 7), ..cfg.decoder };
    let run = generate_one(&repo, x, &models, &cfg.retrieval, &cfg.energy, &decoder)?;
    let e = &run.trace.energies;
    for n in (0..e.len()).step_by((e.len() / 10).max(1)) {
        println!("iter {n:>5}  energy {:.4}", e[n].total);
    }
    println!("\nhate speech: {}", x.text);
    println!("knowledge:   {}", run.generation.y_star);
    println!("response:    {}", run.generation.cn);
    Ok(())
}
