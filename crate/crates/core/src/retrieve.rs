//! Three-layer counter-knowledge retrieval: stance-filtered posts, then
//! comments ranked by a blend of semantic and stance similarity, then
//! sentences ranked by how naturally they follow the hate speech and the
//! counter prompt under the forward LM.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Comment, HateSpeechSample, Post, Repository, Sentence};
use crate::decoder::COUNTER_PROMPT;
use crate::embed::{cosine, EmbedError, EmbeddingSource};
use crate::lm::{LanguageModel, LanguageModelExt, LmError};
use crate::text::Vocabulary;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("no counter-knowledge")]
    NoCounterKnowledge,
    #[error("empty sentence")]
    EmptySentence,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Perplexity of the whole `x ⊕ P ⊕ s`.
    Full,
    /// Perplexity of the tokens of `s` only, conditioned on `x ⊕ P`.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub alpha: f64,
    pub beta: f64,
    pub counter_prompt: String,
    pub fit_mode: FitMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k1: 30,
            k2: 10,
            k3: 10,
            alpha: 0.5,
            beta: 0.5,
            counter_prompt: COUNTER_PROMPT.to_string(),
            fit_mode: FitMode::Full,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.k2 < 1 {
            errs.push("retrieval: k2 must be >= 1".to_string());
        }
        if self.k1 < self.k2 {
            errs.push(format!("retrieval: k1 >= k2 violated (k1 = {}, k2 = {})", self.k1, self.k2));
        }
        if self.k3 < 1 {
            errs.push("retrieval: k3 must be >= 1".to_string());
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            errs.push("retrieval: alpha and beta must be finite and >= 0".to_string());
        } else if self.alpha + self.beta <= 0.0 {
            errs.push("retrieval: alpha + beta must be > 0".to_string());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Layer {
    Sta,
    Chi,
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_ref: String,
    pub score: f64,
    pub layer: Layer,
}

/// The two embedding spaces used for retrieval.
#[derive(Clone, Copy)]
pub struct Encoders<'a> {
    pub stance: &'a dyn EmbeddingSource,
    pub semantic: &'a dyn EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPost<'r> {
    pub post: &'r Post,
    pub sta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredComment<'r> {
    pub comment: &'r Comment,
    pub sta: f64,
    pub chi: f64,
}

/// One retrieved sentence with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub rank: usize,
    pub post_id: String,
    pub comment_id: String,
    pub sentence_index: usize,
    pub text: String,
    pub sta: f64,
    pub chi: f64,
    /// `None` stands for infinite perplexity.
    pub fit: Option<f64>,
}

impl RankedSentence {
    pub fn provenance(&self) -> String {
        format!("{}/{}/{}", self.post_id, self.comment_id, self.sentence_index)
    }
}

/// Retrieval result for one hate-speech input, best sentence first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterKnowledge {
    pub hs_id: String,
    pub sentences: Vec<RankedSentence>,
}

impl CounterKnowledge {
    /// The sentence used to initialize decoding.
    pub fn y_star(&self) -> Option<&RankedSentence> {
        self.sentences.first()
    }

    /// One JSON object per sentence.
    pub fn write_lines<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            hs_id: &'a str,
            #[serde(flatten)]
            sentence: &'a RankedSentence,
        }
        for s in &self.sentences {
            serde_json::to_writer(&mut w, &Line { hs_id: &self.hs_id, sentence: s })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn scored_items(&self) -> Vec<ScoredItem> {
        self.sentences
            .iter()
            .map(|s| ScoredItem { item_ref: s.provenance(), score: s.fit.unwrap_or(f64::INFINITY), layer: Layer::Fit })
            .collect()
    }
}

fn embed_hs(enc: &dyn EmbeddingSource, x: &HateSpeechSample) -> Result<crate::embed::EmbeddingVector, EmbedError> {
    enc.embed(&x.id, &x.target, &x.text)
}

/// Stance cosine between a post (title and body) and the hate speech. The
/// post is embedded towards the hate speech's target.
pub fn sta_score(post: &Post, x: &HateSpeechSample, stance: &dyn EmbeddingSource) -> Result<f64, RetrieveError> {
    let p = stance.embed(&post.id, &x.target, &post.text())?;
    Ok(cosine(&p, &embed_hs(stance, x)?)?)
}

/// Descending score, then ascending id.
fn by_score_desc(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn select_posts<'r>(
    repo: &'r Repository,
    x: &HateSpeechSample,
    config: &RetrievalConfig,
    stance: &dyn EmbeddingSource,
) -> Result<Vec<ScoredPost<'r>>, RetrieveError> {
    let hs = embed_hs(stance, x)?;
    let mut scored: Vec<ScoredPost> = repo
        .posts()
        .par_iter()
        .map(|post| {
            let p = stance.embed(&post.id, &x.target, &post.text())?;
            Ok(ScoredPost { post, sta: cosine(&p, &hs)? })
        })
        .collect::<Result<_, RetrieveError>>()?;
    scored.sort_by(|a, b| by_score_desc((a.sta, &a.post.id), (b.sta, &b.post.id)));
    scored.truncate(config.k1);
    Ok(scored)
}

/// `α·SEM(c, x) + β·STA(parent, x)`.
pub fn chi_score(
    comment: &Comment,
    parent: &Post,
    x: &HateSpeechSample,
    config: &RetrievalConfig,
    enc: Encoders<'_>,
) -> Result<f64, RetrieveError> {
    let sta = sta_score(parent, x, enc.stance)?;
    chi_with_sta(comment, sta, x, config, enc.semantic)
}

fn chi_with_sta(
    comment: &Comment,
    sta: f64,
    x: &HateSpeechSample,
    config: &RetrievalConfig,
    semantic: &dyn EmbeddingSource,
) -> Result<f64, RetrieveError> {
    let mut chi = config.beta * sta;
    if config.alpha != 0.0 {
        let c = semantic.embed(&comment.id, &x.target, &comment.body)?;
        chi += config.alpha * cosine(&c, &embed_hs(semantic, x)?)?;
    }
    Ok(chi)
}

pub fn select_comments<'r>(
    repo: &'r Repository,
    posts: &[ScoredPost<'r>],
    x: &HateSpeechSample,
    config: &RetrievalConfig,
    enc: Encoders<'_>,
) -> Result<Vec<ScoredComment<'r>>, RetrieveError> {
    let candidates: Vec<(&Comment, f64)> =
        posts.iter().flat_map(|p| repo.comments_of(&p.post.id).map(move |c| (c, p.sta))).collect();
    let mut scored: Vec<ScoredComment> = candidates
        .par_iter()
        .map(|&(comment, sta)| Ok(ScoredComment { comment, sta, chi: chi_with_sta(comment, sta, x, config, enc.semantic)? }))
        .collect::<Result<_, RetrieveError>>()?;
    scored.sort_by(|a, b| by_score_desc((a.chi, &a.comment.id), (b.chi, &b.comment.id)));
    scored.truncate(config.k2);
    Ok(scored)
}

/// Perplexity of `<bos> x ⊕ P ⊕ s` under the forward model (lower fits
/// better). Infinite perplexity maps to `+∞`.
pub fn fit_score(sentence: &str, x: &HateSpeechSample, config: &RetrievalConfig, fwd: &dyn LanguageModel) -> Result<f64, RetrieveError> {
    let vocab = fwd.vocab();
    let s = vocab.encode(sentence);
    if s.is_empty() {
        return Err(RetrieveError::EmptySentence);
    }
    let context = fit_context(vocab, x, config);
    let start = context.len();
    let seq = context.concat(&s);
    let ppl = match config.fit_mode {
        FitMode::Full => fwd.perplexity(&seq),
        FitMode::Conditional => fwd.perplexity_from(&seq, start),
    };
    match ppl {
        Ok(p) => Ok(p),
        Err(LmError::InfinitePerplexity { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

fn fit_context(vocab: &Vocabulary, x: &HateSpeechSample, config: &RetrievalConfig) -> crate::text::TokenSeq {
    vocab.encode(&x.text).with_bos().concat(&vocab.encode(&config.counter_prompt))
}

/// Full three-layer retrieval.
pub fn ssf(
    repo: &Repository,
    x: &HateSpeechSample,
    config: &RetrievalConfig,
    enc: Encoders<'_>,
    fwd: &dyn LanguageModel,
) -> Result<CounterKnowledge, RetrieveError> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(RetrieveError::InvalidConfig(errs.join("; ")));
    }
    if repo.is_empty() {
        return Err(RetrieveError::NoCounterKnowledge);
    }
    let posts = select_posts(repo, x, config, enc.stance)?;
    let comments = select_comments(repo, &posts, x, config, enc)?;
    let candidates: Vec<(&ScoredComment, Sentence)> = comments
        .iter()
        .flat_map(|c| repo.sentences_of(c.comment).into_iter().map(move |s| (c, s)))
        .filter(|(_, s)| !fwd.vocab().encode(&s.text).is_empty())
        .collect();
    let mut ranked: Vec<RankedSentence> = candidates
        .par_iter()
        .map(|(c, s)| {
            let fit = fit_score(&s.text, x, config, fwd)?;
            Ok(RankedSentence {
                rank: 0,
                post_id: c.comment.post_id.clone(),
                comment_id: c.comment.id.clone(),
                sentence_index: s.index,
                text: s.text.clone(),
                sta: c.sta,
                chi: c.chi,
                fit: fit.is_finite().then_some(fit),
            })
        })
        .collect::<Result<_, RetrieveError>>()?;
    ranked.sort_by(|a, b| {
        let fa = a.fit.unwrap_or(f64::INFINITY);
        let fb = b.fit.unwrap_or(f64::INFINITY);
        fa.total_cmp(&fb)
            .then_with(|| a.comment_id.cmp(&b.comment_id))
            .then_with(|| a.sentence_index.cmp(&b.sentence_index))
    });
    ranked.truncate(config.k3);
    if ranked.is_empty() {
        return Err(RetrieveError::NoCounterKnowledge);
    }
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(CounterKnowledge { hs_id: x.id.clone(), sentences: ranked })
}
