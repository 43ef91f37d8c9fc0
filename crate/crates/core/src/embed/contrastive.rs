//! In-batch contrastive objective with hard negatives over cosine similarity,
//! and the seeded training loop built on it.

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;

use super::{cosine_raw, EmbedError, EncoderKind, TextEncoder, TriplePair};
use crate::optim::{stage_rng, Adam, Parameterized};

/// Gradients of the loss with respect to each embedding of the batch.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub anchors: Vec<Array1<f64>>,
    pub positives: Vec<Array1<f64>>,
    pub negatives: Vec<Array1<f64>>,
}

/// Loss and gradients for precomputed embeddings.
///
/// For anchor `i` the logits are `cos(zᵢ, zⱼ⁺)/τ` and `cos(zᵢ, zⱼ⁻)/τ` over
/// all `j` in the batch; the loss is the mean negative log-probability of the
/// anchor's own positive.
pub fn contrastive_loss_embeddings(
    anchors: &[Array1<f64>],
    positives: &[Array1<f64>],
    negatives: &[Array1<f64>],
    temperature: f64,
) -> Result<(f64, ContrastiveGrads), EmbedError> {
    let n = anchors.len();
    if n == 0 || positives.len() != n || negatives.len() != n {
        return Err(EmbedError::InvalidArgument("batch must hold N >= 1 complete triples".into()));
    }
    if !(temperature > 0.0) {
        return Err(EmbedError::InvalidArgument("temperature must be positive".into()));
    }
    let zeros = |v: &[Array1<f64>]| v.iter().map(|a| Array1::zeros(a.len())).collect::<Vec<_>>();
    let mut grads = ContrastiveGrads { anchors: zeros(anchors), positives: zeros(positives), negatives: zeros(negatives) };
    let mut total = 0.0;
    for i in 0..n {
        let mut sims = Vec::with_capacity(2 * n);
        for other in positives.iter().chain(negatives.iter()) {
            let s = cosine_raw(anchors[i].view(), other.view())?;
            if !s.is_finite() {
                return Err(EmbedError::NonFiniteSimilarity);
            }
            sims.push(s);
        }
        let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        total += -(logits[i] - max) + denom.ln();
        for (k, other_is_pos) in (0..2 * n).map(|k| (k, k < n)) {
            let w = (logits[k] - max).exp() / denom;
            let d_logit = (w - if k == i { 1.0 } else { 0.0 }) / n as f64;
            let d_sim = d_logit / temperature;
            if d_sim == 0.0 {
                continue;
            }
            let j = k % n;
            let other = if other_is_pos { &positives[j] } else { &negatives[j] };
            let (du, dv) = cosine_grads(anchors[i].view(), other.view(), sims[k]);
            grads.anchors[i].scaled_add(d_sim, &du);
            let target = if other_is_pos { &mut grads.positives[j] } else { &mut grads.negatives[j] };
            target.scaled_add(d_sim, &dv);
        }
    }
    Ok((total / n as f64, grads))
}

fn cosine_grads(u: ArrayView1<f64>, v: ArrayView1<f64>, c: f64) -> (Array1<f64>, Array1<f64>) {
    let nu2 = u.dot(&u);
    let nv2 = v.dot(&v);
    let inv = 1.0 / (nu2 * nv2).sqrt();
    let du = &v * inv - &u * (c / nu2);
    let dv = &u * inv - &v * (c / nv2);
    (du, dv)
}

/// Contrastive loss of a batch of triples under `encoder`.
pub fn contrastive_loss(batch: &[TriplePair], encoder: &TextEncoder, temperature: f64) -> Result<f64, EmbedError> {
    let embed = |target: &str, text: &str| -> Array1<f64> {
        encoder.mlp.forward(encoder.features(&encoder.input_text(target, text)).view()).output
    };
    let a: Vec<_> = batch.iter().map(|t| embed(&t.target, &t.anchor)).collect();
    let p: Vec<_> = batch.iter().map(|t| embed(&t.target, &t.positive)).collect();
    let n: Vec<_> = batch.iter().map(|t| embed(&t.target, &t.hard_negative)).collect();
    Ok(contrastive_loss_embeddings(&a, &p, &n, temperature)?.0)
}

/// Loss and its gradient with respect to the encoder's flat parameters.
pub fn contrastive_loss_and_grad(
    batch: &[TriplePair],
    encoder: &TextEncoder,
    temperature: f64,
) -> Result<(f64, Vec<f64>), EmbedError> {
    let texts: Vec<String> = [0, 1, 2]
        .iter()
        .flat_map(|&role| {
            batch.iter().map(move |t| {
                let text = match role {
                    0 => &t.anchor,
                    1 => &t.positive,
                    _ => &t.hard_negative,
                };
                encoder.input_text(&t.target, text)
            })
        })
        .collect();
    let inputs: Vec<Array1<f64>> = texts.iter().map(|t| encoder.features(t)).collect();
    let acts: Vec<_> = inputs.iter().map(|x| encoder.mlp.forward(x.view())).collect();
    let outs: Vec<Array1<f64>> = acts.iter().map(|a| a.output.clone()).collect();
    let n = batch.len();
    let (loss, g) = contrastive_loss_embeddings(&outs[..n], &outs[n..2 * n], &outs[2 * n..], temperature)?;
    let mut grad = vec![0.0; encoder.num_params()];
    for (k, g_out) in g.anchors.iter().chain(g.positives.iter()).chain(g.negatives.iter()).enumerate() {
        encoder.mlp.backward_into(inputs[k].view(), &acts[k], g_out.view(), &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, learning_rate: 1e-2, batch_size: 16, temperature: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEncoder {
    pub encoder: TextEncoder,
    /// Mean batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
}

/// Adam on shuffled mini-batches of triples. Deterministic given the seed.
pub fn train_encoder(pairs: &[TriplePair], encoder: TextEncoder, config: &TrainConfig) -> Result<TrainedEncoder, EmbedError> {
    if pairs.is_empty() {
        return Err(EmbedError::InvalidArgument("no training triples".into()));
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(EmbedError::InvalidArgument("learning rate and batch size must be positive".into()));
    }
    let mut rng = stage_rng(config.seed, 0x5354_414e);
    let mut encoder = encoder;
    let mut params = encoder.params();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let snapshot = encoder.clone();
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TriplePair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, grad) = contrastive_loss_and_grad(&batch, &encoder, config.temperature)?;
            if !loss.is_finite() || !crate::math::all_finite(grad.iter()) {
                return Err(EmbedError::Diverged {
                    epoch,
                    last_finite: Box::new(TrainedEncoder { encoder: snapshot, epoch_losses }),
                });
            }
            opt.step(&mut params, &grad);
            encoder.set_params(&params);
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(TrainedEncoder { encoder, epoch_losses })
}

/// [`train_encoder`] restricted to stance encoders.
pub fn train_stance_encoder(pairs: &[TriplePair], encoder: TextEncoder, config: &TrainConfig) -> Result<TrainedEncoder, EmbedError> {
    if encoder.kind != EncoderKind::Stance {
        return Err(EmbedError::InvalidArgument("expected a stance encoder".into()));
    }
    train_encoder(pairs, encoder, config)
}

/// Mean `cos(anchor, positive)` minus mean `cos(anchor, negative)`.
pub fn cosine_margin(triples: &[TriplePair], encoder: &TextEncoder) -> Result<f64, EmbedError> {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for t in triples {
        let a = encoder.encode_statement(&t.target, &t.anchor)?;
        let p = encoder.encode_statement(&t.target, &t.positive)?;
        let n = encoder.encode_statement(&t.target, &t.hard_negative)?;
        pos += super::cosine(&a, &p)?;
        neg += super::cosine(&a, &n)?;
    }
    Ok((pos - neg) / triples.len().max(1) as f64)
}
