//! The counter-knowledge repository: posts that state a viewpoint, the
//! counter-comments written under them, and the sentence split of those
//! comments.

mod ingest;
mod split;
mod store;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest, ingest_path, read_hs_samples, read_hs_path};
pub use split::{split_sentences, split_text};
pub use store::{load, save, Manifest};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{count} comment(s) reference missing posts: {}", format_dangling(.references))]
    Dangling {
        count: usize,
        references: Vec<(String, String)>,
    },
    #[error("repository store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_dangling(refs: &[(String, String)]) -> String {
    refs.iter()
        .map(|(c, p)| format!("{c}->{p}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(rename = "targets", default)]
    pub target_tags: BTreeSet<String>,
    #[serde(default)]
    pub score: i64,
}

impl Post {
    /// Title and body joined, the text used for stance embedding.
    pub fn text(&self) -> String {
        if self.body.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub post_id: String,
    pub body: String,
    #[serde(rename = "up", default)]
    pub upvotes: u64,
    #[serde(rename = "down", default)]
    pub downvotes: u64,
    // Stored, not used for ranking.
    #[serde(rename = "delta", default)]
    pub delta_awarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub comment_id: String,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HateSpeechSample {
    pub id: String,
    pub text: String,
    pub target: String,
}

/// Immutable `<posts, comments>` store with referential integrity.
#[derive(Debug, Clone, Default)]
pub struct Repository {
    posts: Vec<Post>,
    comments: Vec<Comment>,
    post_index: HashMap<String, usize>,
    comments_by_post: HashMap<String, Vec<usize>>,
    sentences: Vec<Vec<Sentence>>,
}

impl Repository {
    /// Builds a repository, checking id uniqueness and that every comment's
    /// parent post exists.
    pub fn new(posts: Vec<Post>, comments: Vec<Comment>) -> Result<Self, CorpusError> {
        let mut post_index = HashMap::with_capacity(posts.len());
        for (i, p) in posts.iter().enumerate() {
            if post_index.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { kind: "post", id: p.id.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        let mut dangling = Vec::new();
        let mut comments_by_post: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, c) in comments.iter().enumerate() {
            if !seen.insert(c.id.as_str()) {
                return Err(CorpusError::DuplicateId { kind: "comment", id: c.id.clone() });
            }
            if post_index.contains_key(&c.post_id) {
                comments_by_post.entry(c.post_id.clone()).or_default().push(i);
            } else {
                dangling.push((c.id.clone(), c.post_id.clone()));
            }
        }
        if !dangling.is_empty() {
            return Err(CorpusError::Dangling { count: dangling.len(), references: dangling });
        }
        let sentences = comments.iter().map(split_sentences).collect();
        Ok(Self { posts, comments, post_index, comments_by_post, sentences })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.post_index.get(id).map(|&i| &self.posts[i])
    }

    /// Comments of a post in ingest order.
    pub fn comments_of<'a>(&'a self, post_id: &str) -> impl Iterator<Item = &'a Comment> + 'a {
        self.comments_by_post
            .get(post_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.comments[i])
    }

    /// Sentence split of every comment, aligned with [`Repository::comments`].
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.iter().flatten()
    }

    pub fn sentences_of(&self, comment: &Comment) -> Vec<Sentence> {
        split_sentences(comment)
    }

    /// Drops comments with strictly fewer upvotes than downvotes. Ties stay.
    pub fn filter_comments(&self) -> Repository {
        let kept = self
            .comments
            .iter()
            .filter(|c| c.upvotes >= c.downvotes)
            .cloned()
            .collect();
        Repository::new(self.posts.clone(), kept).expect("filtering keeps integrity")
    }

    /// Up to `limit` posts tagged `target`, by descending score with ties on
    /// ascending id. Unknown targets yield an empty list.
    pub fn query_posts_by_target(&self, target: &str, limit: usize) -> Vec<&Post> {
        let mut hits: Vec<&Post> = self
            .posts
            .iter()
            .filter(|p| p.target_tags.contains(target))
            .collect();
        hits.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(limit);
        hits
    }
}

/// Free-function form of [`Repository::filter_comments`].
pub fn filter_comments(repo: &Repository) -> Repository {
    repo.filter_comments()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, tags: &[&str], score: i64) -> Post {
        Post {
            id: id.into(),
            title: format!("title {id}"),
            body: String::new(),
            target_tags: tags.iter().map(|s| s.to_string()).collect(),
            score,
        }
    }

    fn comment(id: &str, post_id: &str, up: u64, down: u64) -> Comment {
        Comment {
            id: id.into(),
            post_id: post_id.into(),
            body: "Some text. More text.".into(),
            upvotes: up,
            downvotes: down,
            delta_awarded: false,
        }
    }

    #[test]
    fn vote_filter_boundary() {
        let repo = Repository::new(
            vec![post("p1", &["WOMEN"], 1)],
            vec![comment("c1", "p1", 5, 9), comment("c2", "p1", 3, 3), comment("c3", "p1", 4, 1)],
        )
        .unwrap();
        let f = repo.filter_comments();
        let ids: Vec<_> = f.comments().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["c2", "c3"]);
        assert_eq!(f.posts().len(), 1);
    }

    #[test]
    fn dangling_reference_rejected() {
        let err = Repository::new(vec![post("p1", &[], 0)], vec![comment("c1", "p9", 1, 0)]).unwrap_err();
        match err {
            CorpusError::Dangling { count, .. } => assert_eq!(count, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn query_single_match_and_unknown_target() {
        let repo = Repository::new(vec![post("p1", &["WOMEN"], 3), post("p2", &["JEWS"], 9)], vec![]).unwrap();
        let got = repo.query_posts_by_target("WOMEN", 1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "p1");
        assert!(repo.query_posts_by_target("NOBODY", 10).is_empty());
    }

    fn arb_repo() -> impl Strategy<Value = Repository> {
        let posts = proptest::collection::vec((0i64..5, proptest::collection::btree_set(0usize..3, 0..3)), 1..30);
        (posts, proptest::collection::vec((0usize..30, 0u64..6, 0u64..6), 0..60)).prop_map(|(ps, cs)| {
            let tags = ["WOMEN", "JEWS", "LGBT+"];
            let posts: Vec<Post> = ps
                .iter()
                .enumerate()
                .map(|(i, (score, t))| {
                    let names: Vec<&str> = t.iter().map(|&k| tags[k]).collect();
                    post(&format!("p{i:02}"), &names, *score)
                })
                .collect();
            let comments = cs
                .iter()
                .enumerate()
                .map(|(i, (p, up, down))| comment(&format!("c{i}"), &posts[p % posts.len()].id, *up, *down))
                .collect();
            Repository::new(posts, comments).unwrap()
        })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(repo in arb_repo()) {
            let once = repo.filter_comments();
            let twice = once.filter_comments();
            prop_assert_eq!(once.comments(), twice.comments());
            prop_assert!(once.comments().iter().all(|c| c.upvotes >= c.downvotes));
        }

        #[test]
        fn query_is_prefix_of_full_sort(repo in arb_repo(), limit in 1usize..10) {
            let mut all: Vec<&Post> = repo.posts().iter().filter(|p| p.target_tags.contains("WOMEN")).collect();
            all.sort_by_key(|p| (std::cmp::Reverse(p.score), p.id.clone()));
            let got = repo.query_posts_by_target("WOMEN", limit);
            prop_assert_eq!(&got[..], &all[..limit.min(all.len())]);
        }
    }
}
