//! Offline evaluation metrics for generated counter-narratives.

mod client;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ClientError, JudgeClient, JudgeScores, StubJudge, StubToxicity, ToxicityClient};
#[cfg(feature = "http")]
pub use client::{HttpJudge, HttpToxicity};

use crate::classifier::{ClassifierError, CnClassifier, COUNTER};
use crate::embed::{cosine, EmbedError, EmbeddingSource};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("reference shorter than the {0}-gram order")]
    TooShort(usize),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Lowercased word tokens; punctuation is dropped.
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| t.chars().any(char::is_alphanumeric)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Document frequencies and mean length over an evaluation pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut df = HashMap::new();
        let mut total = 0usize;
        for d in docs {
            let t = terms(d.as_ref());
            total += t.len();
            for term in t.into_iter().collect::<HashSet<_>>() {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { n_docs: docs.len(), avg_len, df }
    }

    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (self.n_docs as f64 - df + 0.5) / (df + 0.5)).ln()
    }
}

/// BM25 of `cn` as the document against `hs` as the query, with `k1 = 1.2`
/// and `b = 0.75`.
pub fn bm25_relevance(cn: &str, hs: &str, stats: &CorpusStats) -> f64 {
    bm25_with(cn, hs, stats, Bm25Params::default())
}

pub fn bm25_with(cn: &str, hs: &str, stats: &CorpusStats, p: Bm25Params) -> f64 {
    let doc = terms(cn);
    if doc.is_empty() {
        return 0.0;
    }
    let mut tf: HashMap<&str, f64> = HashMap::new();
    for t in &doc {
        *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    let avg = if stats.avg_len > 0.0 { stats.avg_len } else { doc.len() as f64 };
    let norm = p.k1 * (1.0 - p.b + p.b * doc.len() as f64 / avg);
    terms(hs)
        .iter()
        .map(|q| match tf.get(q.as_str()) {
            Some(&f) => stats.idf(q) * f * (p.k1 + 1.0) / (f + norm),
            None => 0.0,
        })
        .sum()
}

/// A hate-speech input and a candidate response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub hs: String,
    pub cn: String,
}

/// Whether the classifier labels `cn` as countering `hs`.
pub fn is_countering(pair: &EvalPair, clf: &CnClassifier) -> Result<bool, EvalError> {
    let (x, y) = (clf.vocab.encode(&pair.hs), clf.vocab.encode(&pair.cn));
    if y.is_empty() {
        return Ok(false);
    }
    Ok(clf.predict(&x, &y)? == COUNTER)
}

/// Fraction of pairs labelled countering.
pub fn sroc(pairs: &[EvalPair], clf: &CnClassifier) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut hits = 0;
    for p in pairs {
        if is_countering(p, clf)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Jaccard similarity of two word sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    terms(text).into_iter().collect()
}

/// `1 − max_s sim(cn, s)` over the corpus with Jaccard similarity.
pub fn novelty<S: AsRef<str>>(cn: &str, corpus: &[S]) -> Result<f64, EvalError> {
    novelty_with(cn, corpus, jaccard)
}

/// [`novelty`] with a caller-supplied similarity kernel over word sets.
pub fn novelty_with<S: AsRef<str>>(
    cn: &str,
    corpus: &[S],
    kernel: impl Fn(&BTreeSet<String>, &BTreeSet<String>) -> f64,
) -> Result<f64, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = word_set(cn);
    let best = corpus.iter().map(|s| kernel(&c, &word_set(s.as_ref()))).fold(0.0, f64::max);
    Ok(1.0 - best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub ngram_rate: f64,
    pub semantic_sim: f64,
}

/// Share of the distinct `n`-grams of `y*` that reappear in `cn`.
pub fn ngram_retention(cn: &str, y_star: &str, n: usize) -> Result<f64, EvalError> {
    let reference = terms(y_star);
    if n == 0 || reference.len() < n {
        return Err(EvalError::TooShort(n));
    }
    let grams = |t: &[String]| -> HashSet<Vec<String>> { t.windows(n).map(<[String]>::to_vec).collect() };
    let want = grams(&reference);
    let have = grams(&terms(cn));
    Ok(want.intersection(&have).count() as f64 / want.len() as f64)
}

/// Bigram retention plus the semantic cosine of `cn` and `y*`.
pub fn retention(cn: &str, y_star: &str, semantic: &dyn EmbeddingSource) -> Result<Retention, EvalError> {
    Ok(Retention { ngram_rate: ngram_retention(cn, y_star, 2)?, semantic_sim: semantic_similarity(cn, y_star, semantic)? })
}

/// Cosine of the semantic embeddings. A zero-norm embedding (for instance
/// of empty text) counts as similarity 0.
pub fn semantic_similarity(a: &str, b: &str, semantic: &dyn EmbeddingSource) -> Result<f64, EvalError> {
    let (ea, eb) = (semantic.embed("cn", "", a), semantic.embed("y_star", "", b));
    match cosine(&ea?, &eb?) {
        Ok(c) => Ok(c),
        Err(EmbedError::Degenerate) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidScores {
    pub per_valid: f64,
    pub inf_valid: f64,
    pub scored: usize,
    pub skipped: usize,
    /// `(sample index, message)` for every skipped sample.
    pub errors: Vec<(usize, String)>,
}

/// Mean over samples of `rᵢ · judgeᵢ`, where `rᵢ ∈ {0, 1}` is the
/// classifier's countering verdict. Samples the judge fails on are skipped.
pub fn valid_score(pairs: &[EvalPair], clf: &CnClassifier, judge: &dyn JudgeClient) -> Result<ValidScores, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut verdicts = Vec::with_capacity(pairs.len());
    for p in pairs {
        verdicts.push((is_countering(p, clf)?, judge.judge(&p.cn)));
    }
    Ok(product_mean(verdicts))
}

pub fn product_mean(verdicts: Vec<(bool, Result<JudgeScores, ClientError>)>) -> ValidScores {
    let (mut per, mut inf, mut scored) = (0.0, 0.0, 0usize);
    let mut errors = Vec::new();
    for (i, (r, s)) in verdicts.into_iter().enumerate() {
        match s {
            Ok(s) => {
                let r = if r { 1.0 } else { 0.0 };
                per += r * s.persuasiveness;
                inf += r * s.informativeness;
                scored += 1;
            }
            Err(e) => errors.push((i, e.to_string())),
        }
    }
    let denom = scored.max(1) as f64;
    ValidScores { per_valid: per / denom, inf_valid: inf / denom, scored, skipped: errors.len(), errors }
}

/// Metrics of one generated counter-narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub relevance: f64,
    pub countered: bool,
    pub counter_probability: f64,
    pub novelty: f64,
    /// `None` when `y*` is shorter than a bigram.
    pub retention_ngram: Option<f64>,
    pub retention_semantic: f64,
    pub persuasiveness: Option<f64>,
    pub informativeness: Option<f64>,
    pub toxicity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub relevance: f64,
    pub sroc: f64,
    pub novelty: f64,
    pub retention_ngram: Option<f64>,
    pub retention_semantic: f64,
    pub per_valid: f64,
    pub inf_valid: f64,
    pub judge_skipped: usize,
    pub toxicity: Option<f64>,
}

impl MetricReport {
    /// Means over the samples; `None` when there are none.
    pub fn aggregate(rows: &[SampleMetrics]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let judged: Vec<(f64, f64, f64)> = rows
            .iter()
            .filter_map(|r| {
                let v = if r.countered { 1.0 } else { 0.0 };
                Some((v, r.persuasiveness?, r.informativeness?))
            })
            .collect();
        let jn = judged.len().max(1) as f64;
        Some(Self {
            samples: rows.len(),
            relevance: mean(&|r| r.relevance),
            sroc: mean(&|r| if r.countered { 1.0 } else { 0.0 }),
            novelty: mean(&|r| r.novelty),
            retention_ngram: mean_of(rows.iter().filter_map(|r| r.retention_ngram)),
            retention_semantic: mean(&|r| r.retention_semantic),
            per_valid: judged.iter().map(|j| j.0 * j.1).sum::<f64>() / jn,
            inf_valid: judged.iter().map(|j| j.0 * j.2).sum::<f64>() / jn,
            judge_skipped: rows.len() - judged.len(),
            toxicity: mean_of(rows.iter().filter_map(|r| r.toxicity)),
        })
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
