//! Ingests the bundled mini corpus, drops downvoted comments and prints the
//! per-post comment counts and sentence split.
//!
//! `cargo run --example ingest_repository [corpus.jsonl]`

use std::path::PathBuf;

use counterspeech::corpus;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/corpus.jsonl"));
    let raw = corpus::ingest_path(&path)?;
    let repo = raw.filter_comments();
    println!(
        "{} posts, {} comments ({} kept after filtering), {} sentences",
        repo.posts().len(),
        raw.comments().len(),
        repo.comments().len(),
        repo.sentences().count()
    );
    for post in repo.posts().iter().take(5) {
        println!("\n[{}] {} ({} comments)", post.id, post.title, repo.comments_of(&post.id).count());
        if let Some(c) = repo.comments_of(&post.id).next() {
            for s in repo.sentences_of(c) {
                println!("  {}#{}: {}", s.comment_id, s.index, s.text);
            }
        }
    }
    Ok(())
}
