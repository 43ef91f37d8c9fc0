use ndarray::{s, Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ContextToken, Direction, LanguageModel, LmError};
use crate::embed::MlpEncoder;
use crate::math::{all_finite, softmax_temp};
use crate::optim::{stage_rng, Adam, Parameterized};
use crate::text::{TokenId, TokenSeq, Vocabulary};

const ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralLmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for NeuralLmConfig {
    fn default() -> Self {
        Self { embed_dim: 16, hidden: 48, epochs: 30, learning_rate: 0.02, batch_size: 32 }
    }
}

/// Neural trigram model: the two previous tokens are embedded, concatenated
/// and passed through one tanh layer to next-token scores. Missing history on
/// the left is padded with `<bos>`. A soft position contributes the
/// probability-weighted mean of the embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralLm {
    pub vocab: Vocabulary,
    pub direction: Direction,
    /// `|V| × e` token embeddings.
    pub embedding: Array2<f64>,
    pub mlp: MlpEncoder,
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

impl NeuralLm {
    pub fn new(vocab: Vocabulary, direction: Direction, config: &NeuralLmConfig, seed: u64) -> Self {
        let mut rng = stage_rng(seed, 0);
        let v = vocab.len();
        let e = config.embed_dim;
        let mlp = MlpEncoder::new(ORDER * e, config.hidden, v, &mut rng);
        let normal = Normal::new(0.0, 0.5).expect("valid std");
        let embedding = Array2::from_shape_fn((v, e), |_| normal.sample(&mut rng));
        Self { vocab, direction, embedding, mlp, epoch_losses: Vec::new() }
    }

    pub(super) fn train(
        seqs: &[TokenSeq],
        vocab: Vocabulary,
        direction: Direction,
        config: &NeuralLmConfig,
        seed: u64,
    ) -> Result<Self, LmError> {
        if config.embed_dim == 0 || config.hidden == 0 || config.batch_size == 0 {
            return Err(LmError::InvalidArgument("dimensions and batch size must be positive".into()));
        }
        if !(config.learning_rate > 0.0) {
            return Err(LmError::InvalidArgument("learning rate must be positive".into()));
        }
        let mut model = Self::new(vocab, direction, config, seed);
        let mut examples: Vec<([TokenId; ORDER], TokenId)> = Vec::new();
        for s in seqs {
            let ids = s.ids();
            for t in 1..ids.len() {
                examples.push((model.history(&ids[..t]), ids[t]));
            }
        }
        if examples.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut rng = stage_rng(seed, 1);
        let mut opt = Adam::new(model.num_params(), config.learning_rate);
        let mut params = model.params();
        for _ in 0..config.epochs {
            examples.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in examples.chunks(config.batch_size) {
                let mut grad = vec![0.0; params.len()];
                for &(hist, next) in batch {
                    total += model.example_grad(hist, next, &mut grad);
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                opt.step(&mut params, &grad);
                model.set_params(&params);
            }
            let loss = total / examples.len() as f64;
            if !loss.is_finite() {
                return Err(LmError::InvalidArgument("training diverged".into()));
            }
            model.epoch_losses.push(loss);
        }
        Ok(model)
    }

    pub(super) fn validate(&self) -> Result<(), LmError> {
        let v = self.vocab.len();
        let e = self.embedding.ncols();
        if self.embedding.nrows() != v || self.mlp.input_dim() != ORDER * e || self.mlp.output_dim() != v {
            return Err(LmError::Format("parameter shapes do not match vocabulary".into()));
        }
        if !all_finite(self.params().iter()) {
            return Err(LmError::Format("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    fn history(&self, prefix: &[TokenId]) -> [TokenId; ORDER] {
        let mut h = [Vocabulary::BOS_ID; ORDER];
        let n = prefix.len().min(ORDER);
        h[ORDER - n..].copy_from_slice(&prefix[prefix.len() - n..]);
        h
    }

    /// Network input: concatenated embeddings of the padded two-token history.
    fn input(&self, context: &[ContextToken<'_>]) -> Array1<f64> {
        let e = self.embed_dim();
        let mut x = Array1::zeros(ORDER * e);
        let pad = ORDER - context.len().min(ORDER);
        for slot in 0..ORDER {
            let mut dst = x.slice_mut(s![slot * e..(slot + 1) * e]);
            if slot < pad {
                dst.assign(&self.embedding.row(Vocabulary::BOS_ID));
                continue;
            }
            match context[context.len() - (ORDER - slot)] {
                ContextToken::Hard(id) => dst.assign(&self.embedding.row(id)),
                ContextToken::Soft(r) => dst.assign(&self.embedding.t().dot(&r)),
            }
        }
        x
    }

    /// Adds the cross-entropy gradient of one example into `grad` and returns
    /// its loss.
    fn example_grad(&self, hist: [TokenId; ORDER], next: TokenId, grad: &mut [f64]) -> f64 {
        let ctx = hist.map(ContextToken::Hard);
        let x = self.input(&ctx);
        let act = self.mlp.forward(x.view());
        let mut g_out = softmax_temp(act.output.view(), 1.0);
        let loss = -g_out[next].ln();
        g_out[next] -= 1.0;
        let e = self.embed_dim();
        let n_emb = self.embedding.len();
        let g_x = self.mlp.backward_into(x.view(), &act, g_out.view(), &mut grad[n_emb..]);
        for (slot, &id) in hist.iter().enumerate() {
            for k in 0..e {
                grad[id * e + k] += g_x[slot * e + k];
            }
        }
        loss
    }
}

impl Parameterized for NeuralLm {
    fn num_params(&self) -> usize {
        self.embedding.len() + self.mlp.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.embedding.iter().copied().collect();
        p.extend(self.mlp.params());
        p
    }

    fn set_params(&mut self, flat: &[f64]) {
        let n = self.embedding.len();
        for (d, &s) in self.embedding.iter_mut().zip(&flat[..n]) {
            *d = s;
        }
        self.mlp.set_params(&flat[n..]);
    }
}

impl LanguageModel for NeuralLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn context_window(&self) -> Option<usize> {
        Some(ORDER)
    }

    fn scores(&self, context: &[ContextToken<'_>]) -> Array1<f64> {
        self.mlp.forward(self.input(context).view()).output
    }

    fn scores_vjp(&self, context: &[ContextToken<'_>], grad: ArrayView1<f64>) -> Vec<Option<Array1<f64>>> {
        let mut out: Vec<Option<Array1<f64>>> = context
            .iter()
            .map(|c| match c {
                ContextToken::Hard(_) => None,
                ContextToken::Soft(r) => Some(Array1::zeros(r.len())),
            })
            .collect();
        if !context.iter().rev().take(ORDER).any(|c| matches!(c, ContextToken::Soft(_))) {
            return out;
        }
        let x = self.input(context);
        let act = self.mlp.forward(x.view());
        let g_x = self.mlp.backward_input(&act, grad);
        let e = self.embed_dim();
        let used = context.len().min(ORDER);
        for back in 0..used {
            let pos = context.len() - 1 - back;
            let slot = ORDER - 1 - back;
            if let Some(g) = out[pos].as_mut() {
                *g = self.embedding.dot(&g_x.slice(s![slot * e..(slot + 1) * e]));
            }
        }
        out
    }
}
