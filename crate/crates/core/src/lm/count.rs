use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{ContextToken, Direction, LanguageModel, LmError};
use crate::text::{TokenSeq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountLmConfig {
    /// Add-k smoothing constant; 0 gives the unsmoothed maximum-likelihood table.
    pub k: f64,
}

impl Default for CountLmConfig {
    fn default() -> Self {
        Self { k: 0.1 }
    }
}

/// Add-k smoothed bigram table. A soft previous token mixes the table rows:
/// `p(·|r) = Σₐ r(a) p(·|a)`; scores are the log of that mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountLm {
    pub vocab: Vocabulary,
    pub direction: Direction,
    pub k: f64,
    /// `table[[a, b]] = p(b | a)`.
    pub table: Array2<f64>,
}

impl CountLm {
    pub(super) fn train(seqs: &[TokenSeq], vocab: Vocabulary, direction: Direction, config: &CountLmConfig) -> Self {
        let v = vocab.len();
        let mut counts = Array2::<f64>::zeros((v, v));
        for s in seqs {
            for w in s.ids().windows(2) {
                counts[[w[0], w[1]]] += 1.0;
            }
        }
        let k = config.k.max(0.0);
        let mut table = Array2::zeros((v, v));
        for a in 0..v {
            let total: f64 = counts.row(a).sum();
            let denom = total + k * v as f64;
            for b in 0..v {
                table[[a, b]] = if denom > 0.0 { (counts[[a, b]] + k) / denom } else { 1.0 / v as f64 };
            }
        }
        Self { vocab, direction, k, table }
    }

    pub(super) fn validate(&self) -> Result<(), LmError> {
        let v = self.vocab.len();
        if self.table.dim() != (v, v) {
            return Err(LmError::Format("bigram table shape does not match vocabulary".into()));
        }
        Ok(())
    }

    fn mixture(&self, context: &[ContextToken<'_>]) -> Array1<f64> {
        match context.last() {
            None => Array1::from_elem(self.vocab.len(), 1.0 / self.vocab.len() as f64),
            Some(ContextToken::Hard(a)) => self.table.row(*a).to_owned(),
            Some(ContextToken::Soft(r)) => self.table.t().dot(r),
        }
    }
}

impl LanguageModel for CountLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn context_window(&self) -> Option<usize> {
        Some(1)
    }

    fn scores(&self, context: &[ContextToken<'_>]) -> Array1<f64> {
        self.mixture(context).mapv(f64::ln)
    }

    fn scores_vjp(&self, context: &[ContextToken<'_>], grad: ArrayView1<f64>) -> Vec<Option<Array1<f64>>> {
        let mut out: Vec<Option<Array1<f64>>> = context
            .iter()
            .map(|c| match c {
                ContextToken::Hard(_) => None,
                ContextToken::Soft(r) => Some(Array1::zeros(r.len())),
            })
            .collect();
        if let Some(ContextToken::Soft(_)) = context.last() {
            let mix = self.mixture(context);
            let g_mix = ndarray::Zip::from(&grad).and(&mix).map_collect(|&g, &m| if m > 0.0 { g / m } else { 0.0 });
            *out.last_mut().expect("nonempty") = Some(self.table.dot(&g_mix));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::{train_toy_lm, LanguageModelExt, LmConfig};
    use super::*;

    #[test]
    fn abab_bigram_matches_hand_count() {
        let vocab = Vocabulary::build(["a b"], 1);
        let seq = vocab.encode("a b a b");
        let k = 0.1;
        let lm = train_toy_lm(&[seq], &vocab, Direction::Forward, &LmConfig::Count(CountLmConfig { k }), 0).unwrap();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        let p = lm.next_dist(&TokenSeq(vec![0, a])).unwrap();
        // "a" is followed by "b" twice and by nothing else; |V| = 5.
        assert!((p[b] - (2.0 + k) / (2.0 + 5.0 * k)).abs() < 1e-12);
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_limit() {
        let vocab = Vocabulary::build(["a b"], 1);
        let seq = vocab.encode("a b");
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        let mut last = 0.0;
        for k in [1.0, 0.1, 1e-3, 1e-6, 0.0] {
            let lm = train_toy_lm(&[seq.clone()], &vocab, Direction::Forward, &LmConfig::Count(CountLmConfig { k }), 0).unwrap();
            let p = lm.next_dist(&TokenSeq(vec![a])).unwrap()[b];
            assert!(p > last);
            last = p;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn unsmoothed_zero_probability_is_infinite_perplexity() {
        let vocab = Vocabulary::build(["a b"], 1);
        let lm = train_toy_lm(&[vocab.encode("a b")], &vocab, Direction::Forward, &LmConfig::Count(CountLmConfig { k: 0.0 }), 0).unwrap();
        let err = lm.perplexity(&TokenSeq(vec![0, vocab.id("b").unwrap()])).unwrap_err();
        assert!(matches!(err, LmError::InfinitePerplexity { position: 1, .. }));
    }

    #[test]
    fn palindromic_corpus_gives_equal_tables() {
        let vocab = Vocabulary::build(["a b c"], 1);
        let corpus = vec![vocab.encode("a b a"), vocab.encode("c b a b c"), vocab.encode("b")];
        let cfg = LmConfig::Count(CountLmConfig::default());
        let fwd = train_toy_lm(&corpus, &vocab, Direction::Forward, &cfg, 0).unwrap();
        let bwd = train_toy_lm(&corpus, &vocab, Direction::Backward, &cfg, 0).unwrap();
        match (fwd, bwd) {
            (super::super::ToyLm::Count(f), super::super::ToyLm::Count(b)) => assert_eq!(f.table, b.table),
            _ => unreachable!(),
        }
    }
}
