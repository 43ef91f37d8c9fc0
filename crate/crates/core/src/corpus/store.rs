//! Directory persistence: `posts.jsonl`, `comments.jsonl`, `sentences.jsonl`
//! and a `manifest.json` with record counts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Comment, CorpusError, Post, Repository, Sentence};

const FORMAT: &str = "counterspeech-repository";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub posts: usize,
    pub comments: usize,
    pub sentences: usize,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordRef<'a> {
    Post(&'a Post),
    Comment(&'a Comment),
}

pub fn save(repo: &Repository, dir: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_lines(dir.join("posts.jsonl"), repo.posts().iter().map(RecordRef::Post))?;
    write_lines(dir.join("comments.jsonl"), repo.comments().iter().map(RecordRef::Comment))?;
    let sentences: Vec<&Sentence> = repo.sentences().collect();
    write_lines(dir.join("sentences.jsonl"), sentences.iter())?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        posts: repo.posts().len(),
        comments: repo.comments().len(),
        sentences: sentences.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CorpusError::Store(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Repository, CorpusError> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| CorpusError::Store(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(CorpusError::Store(format!("unknown format {:?}", manifest.format)));
    }
    let posts: Vec<Post> = read_lines(dir.join("posts.jsonl"))?;
    let comments: Vec<Comment> = read_lines(dir.join("comments.jsonl"))?;
    if posts.len() != manifest.posts || comments.len() != manifest.comments {
        return Err(CorpusError::Store(format!(
            "manifest lists {} posts / {} comments, files hold {} / {}",
            manifest.posts,
            manifest.comments,
            posts.len(),
            comments.len()
        )));
    }
    let repo = Repository::new(posts, comments)?;
    let stored: Vec<Sentence> = read_lines(dir.join("sentences.jsonl"))?;
    if !stored.iter().eq(repo.sentences()) {
        return Err(CorpusError::Store("sentences.jsonl does not match the comment split".into()));
    }
    Ok(repo)
}

fn write_lines<T: Serialize>(path: impl AsRef<Path>, items: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CorpusError::Store(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed { line: n + 1, message: e.to_string() })?);
    }
    Ok(out)
}
