use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{Comment, CorpusError, HateSpeechSample, Post, Repository};

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Post(Post),
    Comment(Comment),
}

/// Reads line-delimited post and comment records into a [`Repository`].
///
/// Blank lines are skipped. Comments may precede their post in the stream;
/// integrity is checked once every line has been read.
pub fn ingest<R: BufRead>(reader: R) -> Result<Repository, CorpusError> {
    let mut posts = Vec::new();
    let mut comments = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: &str| CorpusError::Invalid { line: line_no, message: message.to_string() };
        match record {
            Record::Post(p) => {
                if p.id.is_empty() {
                    return Err(invalid("post id is empty"));
                }
                if p.title.trim().is_empty() {
                    return Err(invalid("post title is empty"));
                }
                posts.push(p);
            }
            Record::Comment(c) => {
                if c.id.is_empty() {
                    return Err(invalid("comment id is empty"));
                }
                if c.body.trim().is_empty() {
                    return Err(invalid("comment body is empty"));
                }
                comments.push(c);
            }
        }
    }
    Repository::new(posts, comments)
}

pub fn ingest_path(path: impl AsRef<Path>) -> Result<Repository, CorpusError> {
    ingest(BufReader::new(File::open(path)?))
}

/// Reads `{"id","text","target"}` lines.
pub fn read_hs_samples<R: BufRead>(reader: R) -> Result<Vec<HateSpeechSample>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: HateSpeechSample = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: n + 1,
            message: e.to_string(),
        })?;
        if s.text.trim().is_empty() {
            return Err(CorpusError::Invalid { line: n + 1, message: "hate speech text is empty".into() });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_hs_path(path: impl AsRef<Path>) -> Result<Vec<HateSpeechSample>, CorpusError> {
    read_hs_samples(BufReader::new(File::open(path)?))
}
