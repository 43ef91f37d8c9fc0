//! Scores hand-written responses with the offline metrics: BM25 relevance,
//! novelty, n-gram retention and judge-weighted validity.
//!
//! `cargo run --example evaluate_metrics`

use counterspeech::eval::{bm25_relevance, ngram_retention, novelty, product_mean, ClientError, CorpusStats, JudgeScores};

fn main() -> anyhow::Result<()> {
    let hs = "Migrants steal jobs and never pay taxes.";
    let cns = [
        "Migrants pay taxes and fill empty jobs.",
        "Refugees start businesses and create jobs for locals.",
        "Women lead companies and earn degrees.",
    ];
    let knowledge = "Migrants pay taxes and fill jobs that would otherwise stay empty.";
    let corpus = ["They pay taxes.", "Migrants work in hospitals and pay taxes."];
    let stats = CorpusStats::from_documents(&cns);
    for cn in cns {
        let retention = ngram_retention(cn, knowledge, 2).map_or("n/a".to_string(), |r| format!("{r:.3}"));
        println!(
            "{cn:<56} bm25 {:.3}  novelty {:.3}  retention {retention}",
            bm25_relevance(cn, hs, &stats),
            novelty(cn, &corpus)?
        );
    }

    // Judge scores only count for responses the classifier accepts.
    let scored = vec![
        (true, Ok::<_, ClientError>(JudgeScores { persuasiveness: 0.8, informativeness: 0.7 })),
        (false, Ok(JudgeScores { persuasiveness: 0.9, informativeness: 0.2 })),
        (true, Err(ClientError::Timeout)),
    ];
    let v = product_mean(scored);
    println!("\nper_valid {:.3}  inf_valid {:.3}  ({} scored, {} skipped)", v.per_valid, v.inf_valid, v.scored, v.skipped);
    Ok(())
}
