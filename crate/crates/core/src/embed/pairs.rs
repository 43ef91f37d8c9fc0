use serde::{Deserialize, Serialize};

/// A labeled statement from a stance dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceStatement {
    pub text: String,
    pub target: String,
    pub polarity: String,
}

/// `(anchor, positive, hard negative)` statements sharing one target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriplePair {
    pub anchor: String,
    pub positive: String,
    pub hard_negative: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub triples: Vec<TriplePair>,
    /// Anchors with no valid positive or no hard negative.
    pub skipped: usize,
}

/// Enumerates every triple allowed by the pairing rules: the positive shares
/// target and polarity with the anchor (and differs in text), the hard
/// negative shares the target but not the polarity. Output order follows
/// dataset order of anchor, then positive, then negative.
pub fn build_pairs(dataset: &[StanceStatement]) -> PairSet {
    let mut out = PairSet::default();
    for a in dataset {
        if a.text.trim().is_empty() {
            out.skipped += 1;
            continue;
        }
        let same_target = || dataset.iter().filter(|s| s.target == a.target && !s.text.trim().is_empty());
        let positives: Vec<&StanceStatement> =
            same_target().filter(|s| s.polarity == a.polarity && s.text != a.text).collect();
        let negatives: Vec<&StanceStatement> = same_target().filter(|s| s.polarity != a.polarity).collect();
        if positives.is_empty() || negatives.is_empty() {
            out.skipped += 1;
            continue;
        }
        for p in &positives {
            for n in &negatives {
                out.triples.push(TriplePair {
                    anchor: a.text.clone(),
                    positive: p.text.clone(),
                    hard_negative: n.text.clone(),
                    target: a.target.clone(),
                });
            }
        }
    }
    out
}
