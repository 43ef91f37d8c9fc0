use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Signed feature hashing of tokens into a fixed-width vector: the whole token
/// plus its boundary-marked character trigrams, scaled to unit norm before
/// collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHasher {
    pub dim: usize,
}

impl FeatureHasher {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim }
    }

    /// Sparse `(index, value)` features of one token.
    pub fn token_features(&self, token: &str) -> Vec<(usize, f64)> {
        let mut keys = vec![format!("w:{token}")];
        let marked: Vec<char> = format!("<{token}>").chars().collect();
        if marked.len() > 4 {
            keys.extend(marked.windows(3).map(|w| format!("c:{}", w.iter().collect::<String>())));
        }
        let grams = (keys.len() - 1) as f64;
        // Whole-token feature carries most of the mass.
        let w_token = if grams > 0.0 { 0.8f64.sqrt() } else { 1.0 };
        let w_gram = if grams > 0.0 { (0.2 / grams).sqrt() } else { 0.0 };
        keys.iter()
            .enumerate()
            .map(|(i, k)| {
                let h = hash(k);
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                let w = if i == 0 { w_token } else { w_gram };
                ((h % self.dim as u64) as usize, sign * w)
            })
            .collect()
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        for (i, x) in self.token_features(token) {
            v[i] += x;
        }
        v
    }

    /// Mean of the token vectors; zero for an empty token list.
    pub fn mean_features<S: AsRef<str>>(&self, tokens: &[S]) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        if tokens.is_empty() {
            return v;
        }
        for t in tokens {
            for (i, x) in self.token_features(t.as_ref()) {
                v[i] += x;
            }
        }
        v / tokens.len() as f64
    }
}

fn hash(key: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(key.as_bytes());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let f = FeatureHasher::new(64);
        assert_eq!(f.token_vector("equal"), f.token_vector("equal"));
        let v = f.token_vector("equal");
        assert!(v.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        assert!(f.mean_features::<&str>(&[]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn related_words_share_trigrams() {
        let f = FeatureHasher::new(256);
        let a = f.token_vector("immigrants");
        let b = f.token_vector("immigrant");
        let c = f.token_vector("zebra");
        assert!(a.dot(&b) > a.dot(&c));
    }
}
