//! Trains the stance encoder contrastively on labeled statements and shows the
//! favor/against cosine margin before and after.
//!
//! `cargo run --release --example stance_encoder`

use std::path::Path;

use counterspeech::embed::{build_pairs, cosine_margin, train_encoder, EncoderConfig, EncoderKind, StanceStatement, TextEncoder, TrainConfig};
use counterspeech::optim::stage_rng;
use counterspeech::pipeline::read_jsonl;

fn main() -> anyhow::Result<()> {
    let data: Vec<StanceStatement> = read_jsonl(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/stance.jsonl"))?;
    let triples = build_pairs(&data).triples;
    let init = TextEncoder::new(EncoderKind::Stance, EncoderConfig::default(), &mut stage_rng(7, 0));
    let before = cosine_margin(&triples, &init)?;
    let cfg = TrainConfig { epochs: 40, seed: 7, ..Default::default() };
    let trained = train_encoder(&triples, init, &cfg)?;
    let after = cosine_margin(&triples, &trained.encoder)?;
    println!("{} statements, {} triples", data.len(), triples.len());
    println!("cosine margin: {before:.4} -> {after:.4}");

    let enc = &trained.encoder;
    let hs = enc.encode_statement("MIGRANTS", "migrants steal our jobs")?;
    for text in ["immigrants are a burden on the economy", "migrants pay taxes and create jobs"] {
        let v = enc.encode_statement("MIGRANTS", text)?;
        println!("cos(hs, {text:?}) = {:.3}", counterspeech::embed::cosine(&hs, &v)?);
    }
    Ok(())
}
