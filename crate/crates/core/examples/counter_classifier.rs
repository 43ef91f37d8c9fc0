//! Trains the counter-argument classifier on labeled hate-speech / response
//! pairs and scores a few candidates.
//!
//! `cargo run --release --example counter_classifier`

use std::path::Path;

use counterspeech::classifier::{self, read_pairs_path, ClassifierConfig, LabeledPair};
use counterspeech::text::Vocabulary;

fn main() -> anyhow::Result<()> {
    let records = read_pairs_path(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/pairs.jsonl"))?;
    let vocab = Vocabulary::build(records.iter().flat_map(|r| [r.hs.as_str(), r.cn.as_str()]), 1);
    let pairs: Vec<LabeledPair> = records.iter().map(|r| r.encode(&vocab)).collect();
    let cfg = ClassifierConfig { epochs: 100, ..Default::default() };
    let clf = classifier::train(&pairs, &vocab, &cfg, 3)?;
    println!("training accuracy {:.3} on {} pairs", classifier::accuracy(&clf, &pairs)?, pairs.len());

    let hs = vocab.encode("Migrants are a burden and steal our jobs.");
    for cn in ["Migrants pay taxes and fill jobs that would otherwise stay empty.", "Migrants are a burden on our economy."] {
        println!("P(counter | {cn:?}) = {:.3}", clf.counter_probability(&hs, &vocab.encode(cn))?);
    }
    Ok(())
}
