//! Language-model backends.
//!
//! A backend maps a context of tokens to next-token scores. Context positions
//! are either hard token ids or soft rows (probability vectors over the
//! vocabulary); a soft row is consumed as the expectation of the token
//! features under that distribution, so a one-hot row reproduces the hard
//! token exactly. Every backend also supplies the vector-Jacobian product of
//! its scores with respect to the soft rows, which is what lets the decoder
//! differentiate fluency through the model.

mod count;
mod neural;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use count::{CountLm, CountLmConfig};
pub use neural::{NeuralLm, NeuralLmConfig};

pub use crate::math::softmax_temp;
use crate::math::{all_finite, argmax};
use crate::text::{TextError, TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("context must hold at least one token")]
    EmptyContext,
    #[error("sequence must hold at least {0} tokens")]
    TooShort(usize),
    #[error("soft sequence has non-finite logits")]
    NonFinite,
    #[error("soft sequence width {got} does not match vocabulary size {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("infinite perplexity: token {token} at position {position} has zero probability")]
    InfinitePerplexity { position: usize, token: TokenId },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(alias = "fwd")]
    Forward,
    #[serde(alias = "bwd")]
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = LmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fwd" | "forward" => Ok(Direction::Forward),
            "bwd" | "backward" => Ok(Direction::Backward),
            other => Err(LmError::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

/// One context position.
#[derive(Debug, Clone, Copy)]
pub enum ContextToken<'a> {
    Hard(TokenId),
    /// A probability row over the vocabulary.
    Soft(ArrayView1<'a, f64>),
}

/// The backend contract. Token ids handed to [`LanguageModel::scores`] are
/// already validated against the vocabulary.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn direction(&self) -> Direction;

    /// Number of trailing context positions the model reads, or `None` when it
    /// reads the whole context.
    fn context_window(&self) -> Option<usize>;

    /// Pre-softmax scores of the next token.
    fn scores(&self, context: &[ContextToken<'_>]) -> Array1<f64>;

    /// Gradient with respect to every soft row of `context`, given the gradient
    /// with respect to the scores. Hard positions yield `None`.
    fn scores_vjp(&self, context: &[ContextToken<'_>], grad_scores: ArrayView1<f64>) -> Vec<Option<Array1<f64>>>;
}

/// The trailing part of `context` that `lm` actually reads.
pub fn window<'c, 'a>(lm: &(impl LanguageModel + ?Sized), context: &'c [ContextToken<'a>]) -> &'c [ContextToken<'a>] {
    match lm.context_window() {
        Some(w) => &context[context.len().saturating_sub(w)..],
        None => context,
    }
}

/// `T × |V|` matrix of real logits, the decoder's optimization variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    logits: Array2<f64>,
}

impl SoftSequence {
    pub fn new(logits: Array2<f64>) -> Result<Self, LmError> {
        if logits.nrows() == 0 || logits.ncols() == 0 {
            return Err(LmError::TooShort(1));
        }
        if !all_finite(logits.iter()) {
            return Err(LmError::NonFinite);
        }
        Ok(Self { logits })
    }

    /// Rows equal to `scale` at each token and 0 elsewhere.
    pub fn one_hot(seq: &TokenSeq, vocab_size: usize, scale: f64) -> Result<Self, LmError> {
        let mut logits = Array2::zeros((seq.len(), vocab_size));
        for (t, &id) in seq.ids().iter().enumerate() {
            if id >= vocab_size {
                return Err(TextError::IdOutOfRange { id, size: vocab_size }.into());
            }
            logits[[t, id]] = scale;
        }
        Self::new(logits)
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.nrows() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn logits_mut(&mut self) -> ndarray::ArrayViewMut2<'_, f64> {
        self.logits.view_mut()
    }

    pub fn into_logits(self) -> Array2<f64> {
        self.logits
    }

    /// Row-wise `softmax(logits / tau)`.
    pub fn probs(&self, tau: f64) -> Array2<f64> {
        let mut p = self.logits.clone();
        for row in p.rows_mut() {
            crate::math::softmax_in_place(row, tau);
        }
        p
    }

    /// Row-wise argmax.
    pub fn argmax(&self) -> TokenSeq {
        TokenSeq(self.logits.rows().into_iter().map(argmax).collect())
    }
}

/// Operations every backend gets for free.
pub trait LanguageModelExt: LanguageModel {
    /// Next-token distribution after a hard prefix.
    fn next_dist(&self, prefix: &TokenSeq) -> Result<Array1<f64>, LmError> {
        if prefix.is_empty() {
            return Err(LmError::EmptyContext);
        }
        self.vocab().check(prefix)?;
        let ctx: Vec<ContextToken> = prefix.ids().iter().map(|&i| ContextToken::Hard(i)).collect();
        Ok(softmax_temp(self.scores(window(self, &ctx)).view(), 1.0))
    }

    /// Next-token distribution after `left_context` followed by the soft rows
    /// `softmax(soft_prefix / tau_model)`.
    fn next_dist_soft(&self, soft_prefix: &SoftSequence, left_context: &TokenSeq, tau_model: f64) -> Result<Array1<f64>, LmError> {
        if soft_prefix.vocab_size() != self.vocab().len() {
            return Err(LmError::WidthMismatch { got: soft_prefix.vocab_size(), want: self.vocab().len() });
        }
        self.vocab().check(left_context)?;
        let probs = soft_prefix.probs(tau_model);
        let ctx: Vec<ContextToken> = left_context
            .ids()
            .iter()
            .map(|&i| ContextToken::Hard(i))
            .chain(probs.rows().into_iter().map(ContextToken::Soft))
            .collect();
        Ok(softmax_temp(self.scores(window(self, &ctx)).view(), 1.0))
    }

    /// `exp` of the mean next-token cross-entropy over positions `2..=T`.
    fn perplexity(&self, seq: &TokenSeq) -> Result<f64, LmError> {
        self.perplexity_from(seq, 1)
    }

    /// Perplexity scoring only the tokens at positions `start..T` (0-based),
    /// each conditioned on everything before it.
    fn perplexity_from(&self, seq: &TokenSeq, start: usize) -> Result<f64, LmError> {
        let start = start.max(1);
        if seq.len() < 2 || start >= seq.len() {
            return Err(LmError::TooShort(start.max(1) + 1));
        }
        self.vocab().check(seq)?;
        let ctx: Vec<ContextToken> = seq.ids().iter().map(|&i| ContextToken::Hard(i)).collect();
        let mut nll = 0.0;
        for t in start..seq.len() {
            let p = softmax_temp(self.scores(window(self, &ctx[..t])).view(), 1.0);
            let token = seq.ids()[t];
            if p[token] <= 0.0 {
                return Err(LmError::InfinitePerplexity { position: t, token });
            }
            nll -= p[token].ln();
        }
        Ok((nll / (seq.len() - start) as f64).exp())
    }

    /// Teacher-forced scores: row `t` holds the scores for position `t` given
    /// `<bos>` and `seq[..t]`.
    fn logits_of(&self, seq: &TokenSeq) -> Result<SoftSequence, LmError> {
        if seq.is_empty() {
            return Err(LmError::TooShort(1));
        }
        self.vocab().check(seq)?;
        let full = seq.with_bos();
        let ctx: Vec<ContextToken> = full.ids().iter().map(|&i| ContextToken::Hard(i)).collect();
        let mut rows = Array2::zeros((seq.len(), self.vocab().len()));
        for t in 0..seq.len() {
            rows.row_mut(t).assign(&self.scores(window(self, &ctx[..=t])));
        }
        SoftSequence::new(rows)
    }

    /// Greedy continuation of `prefix` (which should start with `<bos>`):
    /// returns the score rows and chosen tokens for `steps` new positions.
    fn greedy_continuation(&self, prefix: &TokenSeq, steps: usize) -> Result<(Array2<f64>, TokenSeq), LmError> {
        if prefix.is_empty() {
            return Err(LmError::EmptyContext);
        }
        self.vocab().check(prefix)?;
        let mut ids = prefix.ids().to_vec();
        let mut rows = Array2::zeros((steps, self.vocab().len()));
        let mut chosen = Vec::with_capacity(steps);
        for s in 0..steps {
            let ctx: Vec<ContextToken> = ids.iter().map(|&i| ContextToken::Hard(i)).collect();
            let scores = self.scores(window(self, &ctx));
            let next = argmax(scores.view());
            rows.row_mut(s).assign(&scores);
            chosen.push(next);
            ids.push(next);
        }
        Ok((rows, TokenSeq(chosen)))
    }
}

impl<T: LanguageModel + ?Sized> LanguageModelExt for T {}

/// Equal scores for every token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformLm {
    pub vocab: Vocabulary,
    pub direction: Direction,
}

impl LanguageModel for UniformLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn context_window(&self) -> Option<usize> {
        Some(0)
    }

    fn scores(&self, _context: &[ContextToken<'_>]) -> Array1<f64> {
        Array1::zeros(self.vocab.len())
    }

    fn scores_vjp(&self, context: &[ContextToken<'_>], _grad: ArrayView1<f64>) -> Vec<Option<Array1<f64>>> {
        context
            .iter()
            .map(|c| match c {
                ContextToken::Hard(_) => None,
                ContextToken::Soft(r) => Some(Array1::zeros(r.len())),
            })
            .collect()
    }
}

/// Which toy architecture to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LmConfig {
    Count(CountLmConfig),
    Neural(NeuralLmConfig),
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig::Neural(NeuralLmConfig::default())
    }
}

/// A shipped toy backend; the unit of model-file persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ToyLm {
    Uniform(UniformLm),
    Count(CountLm),
    Neural(NeuralLm),
}

impl ToyLm {
    fn inner(&self) -> &dyn LanguageModel {
        match self {
            ToyLm::Uniform(m) => m,
            ToyLm::Count(m) => m,
            ToyLm::Neural(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let file = LmFile {
            format: LM_FORMAT.into(),
            version: 1,
            direction: self.direction(),
            vocab_size: self.vocab().len(),
            model: self.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| LmError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let file: LmFile =
            serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| LmError::Format(e.to_string()))?;
        if file.format != LM_FORMAT {
            return Err(LmError::Format(format!("unexpected format {:?}", file.format)));
        }
        if file.direction != file.model.direction() || file.vocab_size != file.model.vocab().len() {
            return Err(LmError::Format("header disagrees with model body".into()));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    fn validate(&self) -> Result<(), LmError> {
        match self {
            ToyLm::Uniform(_) => Ok(()),
            ToyLm::Count(m) => m.validate(),
            ToyLm::Neural(m) => m.validate(),
        }
    }
}

const LM_FORMAT: &str = "counterspeech-lm";

#[derive(Serialize, Deserialize)]
struct LmFile {
    format: String,
    version: u32,
    direction: Direction,
    vocab_size: usize,
    model: ToyLm,
}

impl LanguageModel for ToyLm {
    fn vocab(&self) -> &Vocabulary {
        self.inner().vocab()
    }

    fn direction(&self) -> Direction {
        self.inner().direction()
    }

    fn context_window(&self) -> Option<usize> {
        self.inner().context_window()
    }

    fn scores(&self, context: &[ContextToken<'_>]) -> Array1<f64> {
        self.inner().scores(context)
    }

    fn scores_vjp(&self, context: &[ContextToken<'_>], grad: ArrayView1<f64>) -> Vec<Option<Array1<f64>>> {
        self.inner().scores_vjp(context, grad)
    }
}

/// Trains a toy backend. The backward direction is trained on token-reversed
/// sequences; every training sequence is wrapped in `<bos> ... <eos>`.
pub fn train_toy_lm(
    corpus: &[TokenSeq],
    vocab: &Vocabulary,
    direction: Direction,
    config: &LmConfig,
    seed: u64,
) -> Result<ToyLm, LmError> {
    if corpus.iter().all(TokenSeq::is_empty) {
        return Err(LmError::EmptyCorpus);
    }
    for seq in corpus {
        vocab.check(seq)?;
    }
    let oriented: Vec<TokenSeq> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| match direction {
            Direction::Forward => s.clone(),
            Direction::Backward => s.reversed(),
        })
        .map(|s| {
            let mut ids = s.with_bos().0;
            ids.push(Vocabulary::EOS_ID);
            TokenSeq(ids)
        })
        .collect();
    Ok(match config {
        LmConfig::Count(c) => ToyLm::Count(CountLm::train(&oriented, vocab.clone(), direction, c)),
        LmConfig::Neural(c) => ToyLm::Neural(NeuralLm::train(&oriented, vocab.clone(), direction, c, seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["a b c d e"], 1)
    }

    #[test]
    fn uniform_next_dist_and_perplexity() {
        let lm = UniformLm { vocab: vocab(), direction: Direction::Forward };
        let p = lm.next_dist(&TokenSeq(vec![0, 3, 4])).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 8.0).abs() < 1e-15));
        let ppl = lm.perplexity(&TokenSeq(vec![0, 3, 4, 5, 1])).unwrap();
        assert!((ppl - 8.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let lm = UniformLm { vocab: vocab(), direction: Direction::Forward };
        assert!(matches!(lm.next_dist(&TokenSeq(vec![])), Err(LmError::EmptyContext)));
        assert!(matches!(lm.next_dist(&TokenSeq(vec![42])), Err(LmError::Text(_))));
        assert!(matches!(lm.perplexity(&TokenSeq(vec![0])), Err(LmError::TooShort(_))));
        assert!(SoftSequence::new(Array2::from_elem((1, 2), f64::NAN)).is_err());
    }

    #[test]
    fn logits_of_single_token_uniform() {
        let lm = UniformLm { vocab: vocab(), direction: Direction::Forward };
        let rows = lm.logits_of(&TokenSeq(vec![3])).unwrap();
        assert_eq!(rows.len(), 1);
        let r = rows.logits().row(0).to_owned();
        assert!(r.iter().all(|&x| x == r[0]));
        for row in rows.probs(1.0).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_parse() {
        assert_eq!("fwd".parse::<Direction>().unwrap(), Direction::Forward);
        assert_eq!("backward".parse::<Direction>().unwrap(), Direction::Backward);
        assert!("sideways".parse::<Direction>().is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        let r = train_toy_lm(&[TokenSeq(vec![])], &vocab(), Direction::Forward, &LmConfig::default(), 0);
        assert!(matches!(r, Err(LmError::EmptyCorpus)));
    }
}
