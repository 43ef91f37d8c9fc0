//! Counter-narrative classifier over joined `<HS, candidate>` sequences.
//!
//! The joined input is `<bos> x <eos> σ(ỹ/τ) <eos>`. Each row, hard or soft,
//! is mapped to hashed token features (a soft row gives the expectation of
//! the features), the rows are mean-pooled separately over the hate-speech
//! segment and the candidate segment, and the two pooled vectors go through
//! the shared toy encoder and a two-way linear head. Class 1 is "counter".

use std::io::BufRead;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{FeatureHasher, MlpEncoder};
use crate::lm::SoftSequence;
use crate::math::{log_softmax, softmax_in_place, softmax_temp, softmax_vjp};
use crate::optim::{stage_rng, Adam, Parameterized};
use crate::text::{TextError, TokenSeq, Vocabulary};

pub const COUNTER: usize = 1;
pub const NON_COUNTER: usize = 0;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("joined length {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence in pair")]
    EmptySequence,
    #[error("training data holds a single class")]
    SingleClass,
    #[error("soft sequence width {got} does not match vocabulary size {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    pub tau_join: f64,
    pub max_len: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            hidden: 32,
            dim: 16,
            tau_join: 1.0,
            max_len: 512,
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub hs: TokenSeq,
    pub candidate: TokenSeq,
    pub label: usize,
}

/// One line of a training pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub hs: String,
    pub cn: String,
    pub label: u8,
}

impl PairRecord {
    pub fn encode(&self, vocab: &Vocabulary) -> LabeledPair {
        LabeledPair { hs: vocab.encode(&self.hs), candidate: vocab.encode(&self.cn), label: self.label as usize }
    }
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairRecord>, ClassifierError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| ClassifierError::Malformed { line: n + 1, message: e.to_string() })?;
        if rec.label > 1 {
            return Err(ClassifierError::Malformed { line: n + 1, message: format!("label {} is not 0 or 1", rec.label) });
        }
        if rec.hs.trim().is_empty() || rec.cn.trim().is_empty() {
            return Err(ClassifierError::Malformed { line: n + 1, message: "empty text".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_pairs_path(path: impl AsRef<Path>) -> Result<Vec<PairRecord>, ClassifierError> {
    read_pairs(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Probability rows of `<bos> x <eos> σ(ỹ/τ) <eos>` plus the segment boundary.
#[derive(Debug, Clone)]
pub struct JoinedInput {
    pub rows: Array2<f64>,
    /// Rows `..hs_len` form the hate-speech segment.
    pub hs_len: usize,
}

impl JoinedInput {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

pub fn join(x: &TokenSeq, y_soft: &SoftSequence, tau_join: f64, max_len: usize) -> Result<JoinedInput, ClassifierError> {
    if !(tau_join > 0.0) {
        return Err(ClassifierError::InvalidArgument("join temperature must be positive".into()));
    }
    let v = y_soft.vocab_size();
    let len = x.len() + y_soft.len() + 3;
    if len > max_len {
        return Err(ClassifierError::TooLong { len, max: max_len });
    }
    let mut rows = Array2::zeros((len, v));
    let hs_ids = std::iter::once(Vocabulary::BOS_ID).chain(x.ids().iter().copied()).chain([Vocabulary::EOS_ID]);
    for (r, id) in hs_ids.enumerate() {
        if id >= v {
            return Err(TextError::IdOutOfRange { id, size: v }.into());
        }
        rows[[r, id]] = 1.0;
    }
    let hs_len = x.len() + 2;
    rows.slice_mut(s![hs_len..len - 1, ..]).assign(&y_soft.logits());
    for r in hs_len..len - 1 {
        softmax_in_place(rows.row_mut(r), tau_join);
    }
    rows[[len - 1, Vocabulary::EOS_ID]] = 1.0;
    Ok(JoinedInput { rows, hs_len })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnClassifier {
    pub vocab: Vocabulary,
    pub hasher: FeatureHasher,
    pub tau_join: f64,
    pub max_len: usize,
    pub mlp: MlpEncoder,
    /// `2 × d` head weights.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub history: Vec<EpochMetrics>,
    #[serde(skip)]
    phi: Array2<f64>,
}

struct Forward {
    feats: Array1<f64>,
    act: crate::embed::MlpActivation,
    logits: Array1<f64>,
}

impl CnClassifier {
    pub fn new(vocab: Vocabulary, config: &ClassifierConfig, seed: u64) -> Self {
        let mut rng = stage_rng(seed, 0);
        let f = config.feature_dim;
        let mlp = MlpEncoder::new(2 * f, config.hidden, config.dim, &mut rng);
        let normal = Normal::new(0.0, (1.0 / config.dim as f64).sqrt()).expect("valid std");
        let mut clf = Self {
            vocab,
            hasher: FeatureHasher::new(f),
            tau_join: config.tau_join,
            max_len: config.max_len,
            mlp,
            w: Array2::from_shape_fn((2, config.dim), |_| normal.sample(&mut rng)),
            b: Array1::zeros(2),
            history: Vec::new(),
            phi: Array2::zeros((0, 0)),
        };
        clf.rebuild_features();
        clf
    }

    fn rebuild_features(&mut self) {
        let f = self.hasher.dim;
        let mut phi = Array2::zeros((self.vocab.len(), f));
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            phi.row_mut(i).assign(&self.hasher.token_vector(tok));
        }
        self.phi = phi;
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn pooled(&self, rows: ArrayView2<f64>) -> Array1<f64> {
        rows.dot(&self.phi).mean_axis(Axis(0)).expect("nonempty segment")
    }

    fn features_joined(&self, joined: &JoinedInput) -> Array1<f64> {
        let hs = self.pooled(joined.rows.slice(s![..joined.hs_len, ..]));
        let cand = self.pooled(joined.rows.slice(s![joined.hs_len.., ..]));
        concatenate![Axis(0), hs, cand]
    }

    fn features_hard(&self, x: &TokenSeq, y: &TokenSeq) -> Result<Array1<f64>, ClassifierError> {
        if x.is_empty() || y.is_empty() {
            return Err(ClassifierError::EmptySequence);
        }
        self.vocab.check(x)?;
        self.vocab.check(y)?;
        let len = x.len() + y.len() + 3;
        if len > self.max_len {
            return Err(ClassifierError::TooLong { len, max: self.max_len });
        }
        let mean = |ids: &mut dyn Iterator<Item = usize>| {
            let mut acc = Array1::zeros(self.hasher.dim);
            let mut n = 0.0;
            for id in ids {
                acc += &self.phi.row(id);
                n += 1.0;
            }
            acc / n
        };
        let hs = mean(&mut std::iter::once(Vocabulary::BOS_ID).chain(x.ids().iter().copied()).chain([Vocabulary::EOS_ID]));
        let cand = mean(&mut y.ids().iter().copied().chain([Vocabulary::EOS_ID]));
        Ok(concatenate![Axis(0), hs, cand])
    }

    fn forward(&self, feats: Array1<f64>) -> Forward {
        let act = self.mlp.forward(feats.view());
        let logits = self.w.dot(&act.output) + &self.b;
        Forward { feats, act, logits }
    }

    /// Logits of a discrete pair.
    pub fn logits_hard(&self, x: &TokenSeq, y: &TokenSeq) -> Result<Array1<f64>, ClassifierError> {
        Ok(self.forward(self.features_hard(x, y)?).logits)
    }

    /// Logits of `x` joined with the soft candidate `ỹ`.
    pub fn logits(&self, x: &TokenSeq, y_soft: &SoftSequence) -> Result<Array1<f64>, ClassifierError> {
        Ok(self.forward(self.features_joined(&self.join(x, y_soft)?)).logits)
    }

    fn join(&self, x: &TokenSeq, y_soft: &SoftSequence) -> Result<JoinedInput, ClassifierError> {
        if y_soft.vocab_size() != self.vocab.len() {
            return Err(ClassifierError::WidthMismatch { got: y_soft.vocab_size(), want: self.vocab.len() });
        }
        self.vocab.check(x)?;
        join(x, y_soft, self.tau_join, self.max_len)
    }

    /// Gradient of `g_logitsᵀ · logits(x, ỹ)` with respect to the logits of `ỹ`.
    pub fn logits_vjp(&self, x: &TokenSeq, y_soft: &SoftSequence, g_logits: ArrayView1<f64>) -> Result<Array2<f64>, ClassifierError> {
        let joined = self.join(x, y_soft)?;
        let fwd = self.forward(self.features_joined(&joined));
        let g_z = self.w.t().dot(&g_logits);
        let g_feats = self.mlp.backward_input(&fwd.act, g_z.view());
        let f = self.hasher.dim;
        let n_cand = (joined.len() - joined.hs_len) as f64;
        let g_row = self.phi.dot(&g_feats.slice(s![f..])) / n_cand;
        let mut out = Array2::zeros((y_soft.len(), y_soft.vocab_size()));
        for t in 0..y_soft.len() {
            let probs = joined.rows.row(joined.hs_len + t);
            out.row_mut(t).assign(&softmax_vjp(probs, g_row.view(), self.tau_join));
        }
        Ok(out)
    }

    /// Probability of the counter class for a discrete pair.
    pub fn counter_probability(&self, x: &TokenSeq, y: &TokenSeq) -> Result<f64, ClassifierError> {
        Ok(softmax_temp(self.logits_hard(x, y)?.view(), 1.0)[COUNTER])
    }

    pub fn predict(&self, x: &TokenSeq, y: &TokenSeq) -> Result<usize, ClassifierError> {
        let l = self.logits_hard(x, y)?;
        Ok(if l[COUNTER] > l[NON_COUNTER] { COUNTER } else { NON_COUNTER })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let json = serde_json::to_string(&ClassifierFile { format: CLF_FORMAT.into(), version: 1, model: self.clone() })
            .map_err(|e| ClassifierError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let file: ClassifierFile = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| ClassifierError::Format(e.to_string()))?;
        if file.format != CLF_FORMAT {
            return Err(ClassifierError::Format(format!("unexpected format {:?}", file.format)));
        }
        let mut clf = file.model;
        if clf.mlp.input_dim() != 2 * clf.hasher.dim || clf.w.dim() != (2, clf.mlp.output_dim()) || clf.b.len() != 2 {
            return Err(ClassifierError::Format("parameter shapes disagree".into()));
        }
        clf.rebuild_features();
        Ok(clf)
    }
}

const CLF_FORMAT: &str = "counterspeech-classifier";

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    version: u32,
    model: CnClassifier,
}

impl Parameterized for CnClassifier {
    fn num_params(&self) -> usize {
        self.mlp.num_params() + self.w.len() + self.b.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.mlp.params();
        p.extend(self.w.iter().chain(self.b.iter()));
        p
    }

    fn set_params(&mut self, flat: &[f64]) {
        let n = self.mlp.num_params();
        self.mlp.set_params(&flat[..n]);
        let mut it = flat[n..].iter().copied();
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            *v = it.next().expect("length checked");
        }
    }
}

/// Trains a fresh classifier on `pairs` with Adam on the cross-entropy.
pub fn train(pairs: &[LabeledPair], vocab: &Vocabulary, config: &ClassifierConfig, seed: u64) -> Result<CnClassifier, ClassifierError> {
    if pairs.is_empty() || pairs.iter().all(|p| p.label == pairs[0].label) {
        return Err(ClassifierError::SingleClass);
    }
    if let Some(p) = pairs.iter().find(|p| p.label > 1) {
        return Err(ClassifierError::InvalidArgument(format!("label {} is not 0 or 1", p.label)));
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(ClassifierError::InvalidArgument("learning rate and batch size must be positive".into()));
    }
    let mut clf = CnClassifier::new(vocab.clone(), config, seed);
    let feats: Vec<Array1<f64>> = pairs.iter().map(|p| clf.features_hard(&p.hs, &p.candidate)).collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = stage_rng(seed, 1);
    let mut opt = Adam::new(clf.num_params(), config.learning_rate);
    let mut params = clf.params();
    let n_mlp = clf.mlp.num_params();
    let d = clf.dim();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.len()];
            for &i in batch {
                let fwd = clf.forward(feats[i].clone());
                let label = pairs[i].label;
                loss -= log_softmax(fwd.logits.view())[label];
                if (fwd.logits[COUNTER] > fwd.logits[NON_COUNTER]) == (label == COUNTER) {
                    correct += 1;
                }
                let mut g = softmax_temp(fwd.logits.view(), 1.0);
                g[label] -= 1.0;
                for r in 0..2 {
                    for c in 0..d {
                        grad[n_mlp + r * d + c] += g[r] * fwd.act.output[c];
                    }
                    grad[n_mlp + 2 * d + r] += g[r];
                }
                let g_z = clf.w.t().dot(&g);
                clf.mlp.backward_into(fwd.feats.view(), &fwd.act, g_z.view(), &mut grad[..n_mlp]);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params, &grad);
            clf.set_params(&params);
        }
        clf.history.push(EpochMetrics { loss: loss / pairs.len() as f64, accuracy: correct as f64 / pairs.len() as f64 });
    }
    Ok(clf)
}

/// Fraction of `pairs` the classifier labels correctly.
pub fn accuracy(clf: &CnClassifier, pairs: &[LabeledPair]) -> Result<f64, ClassifierError> {
    let mut correct = 0;
    for p in pairs {
        if clf.predict(&p.hs, &p.candidate)? == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Negative log-likelihood of the counter class divided by `gamma`.
pub fn cc_loss_from_logits(logits: ArrayView1<f64>, gamma: f64) -> f64 {
    -log_softmax(logits)[COUNTER] / gamma
}

pub fn cc_loss(x: &TokenSeq, y_soft: &SoftSequence, clf: &CnClassifier, gamma: f64) -> Result<f64, ClassifierError> {
    check_gamma(gamma)?;
    Ok(cc_loss_from_logits(clf.logits(x, y_soft)?.view(), gamma))
}

/// [`cc_loss`] and its gradient with respect to the logits of `ỹ`.
pub fn cc_loss_and_grad(
    x: &TokenSeq,
    y_soft: &SoftSequence,
    clf: &CnClassifier,
    gamma: f64,
) -> Result<(f64, Array2<f64>), ClassifierError> {
    check_gamma(gamma)?;
    let logits = clf.logits(x, y_soft)?;
    let loss = cc_loss_from_logits(logits.view(), gamma);
    let mut g = softmax_temp(logits.view(), 1.0);
    g[COUNTER] -= 1.0;
    g /= gamma;
    Ok((loss, clf.logits_vjp(x, y_soft, g.view())?))
}

fn check_gamma(gamma: f64) -> Result<(), ClassifierError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(ClassifierError::InvalidArgument(format!("gamma must be positive, got {gamma}")))
    }
}
