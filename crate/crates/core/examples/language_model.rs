//! Trains forward count and neural language models on repository sentences
//! and compares their perplexities with the uniform baseline.
//!
//! `cargo run --release --example language_model`

use std::path::Path;

use counterspeech::corpus;
use counterspeech::lm::{train_toy_lm, CountLmConfig, Direction, LanguageModelExt, LmConfig, NeuralLmConfig, UniformLm};
use counterspeech::text::{TokenSeq, Vocabulary};

fn main() -> anyhow::Result<()> {
    let repo = corpus::ingest_path(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/corpus.jsonl"))?.filter_comments();
    let texts: Vec<&str> = repo.sentences().map(|s| s.text.as_str()).collect();
    let vocab = Vocabulary::build(texts.iter().copied(), 1);
    let seqs: Vec<TokenSeq> = texts.iter().map(|t| vocab.encode(t)).collect();

    let count = train_toy_lm(&seqs, &vocab, Direction::Forward, &LmConfig::Count(CountLmConfig::default()), 1)?;
    let neural = train_toy_lm(&seqs, &vocab, Direction::Forward, &LmConfig::Neural(NeuralLmConfig::default()), 1)?;
    let uniform = UniformLm { vocab: vocab.clone(), direction: Direction::Forward };

    println!("|V| = {}", vocab.len());
    for s in ["Migrants pay taxes and fill jobs.", "Jobs fill taxes pay migrants and."] {
        let seq = vocab.encode(s).with_bos();
        println!(
            "{s:?}: count {:.1}, neural {:.1}, uniform {:.1}",
            count.perplexity(&seq)?,
            neural.perplexity(&seq)?,
            uniform.perplexity(&seq)?
        );
    }
    Ok(())
}
