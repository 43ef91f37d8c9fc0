//! Runs the full loop over the mini corpus: ingest, train, retrieve, decode
//! and evaluate, writing outputs under the given directory.
//!
//! `cargo run --release --example run_pipeline [out-dir]`

use std::path::{Path, PathBuf};

use counterspeech::pipeline::{run_pipeline, validate_config_with};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("counterspeech-mini"));
    let set = |k: &str, sub: &str| format!("paths.{k}={:?}", out.join(sub).display().to_string());
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/pipeline.toml");
    let v = validate_config_with(config, &[set("out", "report"), set("repo", "repo"), set("models", "models")])
        .map_err(|e| anyhow::anyhow!(e.join("; ")))?;
    let report = run_pipeline(&v.config)?;
    for row in &report.rows {
        match (&row.cn, &row.error) {
            (Some(cn), _) => println!("{}: {cn}", row.hs_id),
            (None, Some(e)) => println!("{}: failed: {e}", row.hs_id),
            _ => {}
        }
    }
    if let Some(s) = &report.summary {
        println!("\n{}", serde_json::to_string_pretty(s)?);
    }
    println!("outputs in {}", out.join("report").display());
    Ok(())
}
