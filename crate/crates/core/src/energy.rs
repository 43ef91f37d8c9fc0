//! Constraint energies over a soft sequence and their analytic gradients.
//!
//! All terms are "lower is better":
//! * `f_sim = 1 − match`, where `match` is the clipped expected n-gram
//!   precision of `ỹ` against the retrieved knowledge `y*`;
//! * `f_cc`, the counter-class negative log-likelihood divided by `γ`;
//! * `f_lr` / `f_rl`, the cross-entropy between each row's distribution and
//!   the forward (backward) LM prediction from the soft context on its left
//!   (right).

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{cc_loss_and_grad, ClassifierError, CnClassifier};
use crate::lm::{window, ContextToken, LanguageModel, SoftSequence};
use crate::math::{all_finite, log_softmax, softmax_temp, softmax_vjp};
use crate::text::{TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("degenerate lengths: {0}")]
    Degenerate(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("soft sequence width {got} does not match vocabulary size {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("invalid energy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_c_lr: f64,
    pub lambda_c_rl: f64,
    pub ngram_n: usize,
    /// Divisor of the countering term; `None` uses the candidate length.
    pub gamma: Option<f64>,
    /// Temperature of the soft rows fed to the language models.
    pub tau_model: f64,
    /// Stop the gradient through the LM prediction in the fluency terms.
    pub detach_lm: bool,
    /// Divide the fluency terms by the sequence length.
    pub normalize: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            lambda_a: 0.25,
            lambda_b: 0.5,
            lambda_c_lr: 0.225,
            lambda_c_rl: 0.025,
            ngram_n: 2,
            gamma: None,
            tau_model: 1.0,
            detach_lm: false,
            normalize: false,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let l = [self.lambda_a, self.lambda_b, self.lambda_c_lr, self.lambda_c_rl];
        if l.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            errs.push("energy: every lambda must be finite and >= 0".to_string());
        } else if l.iter().sum::<f64>() <= 0.0 {
            errs.push("energy: lambda_a + lambda_b + lambda_c_lr + lambda_c_rl must be > 0".to_string());
        }
        if self.ngram_n == 0 {
            errs.push("energy: ngram_n must be >= 1".to_string());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                errs.push("energy: gamma must be > 0".to_string());
            }
        }
        if !(self.tau_model > 0.0) {
            errs.push("energy: tau_model must be > 0".to_string());
        }
        errs
    }

    pub fn gamma_for(&self, len: usize) -> f64 {
        self.gamma.unwrap_or(len as f64)
    }

    /// Every weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_a: self.lambda_a * k,
            lambda_b: self.lambda_b * k,
            lambda_c_lr: self.lambda_c_lr * k,
            lambda_c_rl: self.lambda_c_rl * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub f_sim: f64,
    pub f_cc: f64,
    pub f_lr: f64,
    pub f_rl: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn combine(cfg: &EnergyConfig, f_sim: f64, f_cc: f64, f_lr: f64, f_rl: f64) -> Self {
        let total = cfg.lambda_a * f_sim + cfg.lambda_b * f_cc + cfg.lambda_c_lr * f_lr + cfg.lambda_c_rl * f_rl;
        Self { f_sim, f_cc, f_lr, f_rl, total }
    }

    /// The four weighted contributions, for judging their relative magnitude.
    pub fn weighted(&self, cfg: &EnergyConfig) -> [f64; 4] {
        [cfg.lambda_a * self.f_sim, cfg.lambda_b * self.f_cc, cfg.lambda_c_lr * self.f_lr, cfg.lambda_c_rl * self.f_rl]
    }
}

/// `<bos> x ⊕ prompt`, the hard left context of the fluency term.
pub fn left_context(x: &TokenSeq, prompt: &TokenSeq) -> TokenSeq {
    x.with_bos().concat(prompt)
}

/// Everything the energy is evaluated against, besides `ỹ` itself.
#[derive(Clone, Copy)]
pub struct Constraints<'a> {
    pub x: &'a TokenSeq,
    pub x_l: &'a TokenSeq,
    pub y_star: &'a TokenSeq,
    pub clf: &'a CnClassifier,
    pub fwd: &'a dyn LanguageModel,
    pub bwd: &'a dyn LanguageModel,
}

/// Clipped expected n-gram precision of `ỹ` against `y*` and its gradient
/// with respect to the logits. Rows are read as `softmax(ỹ_t)`.
pub fn ngram_match_and_grad(y_soft: &SoftSequence, y_star: &TokenSeq, n: usize) -> Result<(f64, Array2<f64>), EnergyError> {
    let t_len = y_soft.len();
    if n == 0 || t_len < n || y_star.len() < n {
        return Err(EnergyError::Degenerate(format!("n = {n}, |ỹ| = {t_len}, |y*| = {}", y_star.len())));
    }
    if let Some(&id) = y_star.ids().iter().find(|&&id| id >= y_soft.vocab_size()) {
        return Err(EnergyError::Degenerate(format!("y* token {id} outside the vocabulary")));
    }
    let probs = y_soft.probs(1.0);
    let windows = (t_len - n + 1) as f64;
    let mut grad_p = Array2::<f64>::zeros(probs.raw_dim());
    let mut matched = 0.0;
    for (gram, cap) in ngram_counts(y_star.ids(), n) {
        let mut expected = 0.0;
        let mut terms = Vec::with_capacity(t_len - n + 1);
        for t in 0..=t_len - n {
            let factors: Vec<f64> = (0..n).map(|j| probs[[t + j, gram[j]]]).collect();
            expected += factors.iter().product::<f64>();
            terms.push(factors);
        }
        if expected < cap as f64 {
            matched += expected;
            for (t, factors) in terms.iter().enumerate() {
                for j in 0..n {
                    let others: f64 = factors.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &f)| f).product();
                    grad_p[[t + j, gram[j]]] += others / windows;
                }
            }
        } else {
            matched += cap as f64;
        }
    }
    let mut grad = Array2::zeros(probs.raw_dim());
    for t in 0..t_len {
        grad.row_mut(t).assign(&softmax_vjp(probs.row(t), grad_p.row(t), 1.0));
    }
    Ok((matched / windows, grad))
}

fn ngram_counts(ids: &[TokenId], n: usize) -> Vec<(Vec<TokenId>, usize)> {
    let mut counts: HashMap<&[TokenId], usize> = HashMap::new();
    let mut order = Vec::new();
    for g in ids.windows(n) {
        let c = counts.entry(g).or_insert(0);
        if *c == 0 {
            order.push(g);
        }
        *c += 1;
    }
    order.into_iter().map(|g| (g.to_vec(), counts[g])).collect()
}

/// `1 −` [`ngram_match_and_grad`], with the matching gradient.
pub fn f_sim_and_grad(y_soft: &SoftSequence, y_star: &TokenSeq, n: usize) -> Result<(f64, Array2<f64>), EnergyError> {
    let (m, g) = ngram_match_and_grad(y_soft, y_star, n)?;
    Ok((1.0 - m, -g))
}

pub fn f_sim(y_soft: &SoftSequence, y_star: &TokenSeq, n: usize) -> Result<f64, EnergyError> {
    Ok(f_sim_and_grad(y_soft, y_star, n)?.0)
}

/// Discrete clipped n-gram precision of `y` against `y*`.
pub fn ngram_precision(y: &TokenSeq, y_star: &TokenSeq, n: usize) -> Option<f64> {
    if n == 0 || y.len() < n {
        return None;
    }
    let reference: HashMap<Vec<TokenId>, usize> = ngram_counts(y_star.ids(), n).into_iter().collect();
    let hits: usize = ngram_counts(y.ids(), n)
        .into_iter()
        .map(|(g, c)| c.min(reference.get(&g).copied().unwrap_or(0)))
        .sum();
    Some(hits as f64 / (y.len() - n + 1) as f64)
}

/// One fluency direction: `Σ_t −Σ_v p_lm(v | context_t) · log softmax(ỹ_t)(v)`
/// with its gradient. `context_of(t)` lists the context as hard ids and soft
/// row indices into `ỹ`, oldest first.
fn fluency_and_grad(
    y_soft: &SoftSequence,
    lm: &dyn LanguageModel,
    tau_model: f64,
    detach: bool,
    context_of: impl Fn(usize) -> Vec<Slot> + Sync,
) -> Result<(f64, Array2<f64>), EnergyError> {
    let v = lm.vocab().len();
    if y_soft.vocab_size() != v {
        return Err(EnergyError::WidthMismatch { got: y_soft.vocab_size(), want: v });
    }
    let probs = y_soft.probs(tau_model);
    let logits = y_soft.logits();
    let t_len = y_soft.len();
    let per_position: Vec<(f64, Array1<f64>, Vec<(usize, Array1<f64>)>)> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let slots = context_of(t);
            let ctx: Vec<ContextToken> = slots
                .iter()
                .map(|s| match *s {
                    Slot::Hard(id) => ContextToken::Hard(id),
                    Slot::Row(r) => ContextToken::Soft(probs.row(r)),
                })
                .collect();
            let win = window(lm, &ctx);
            let offset = ctx.len() - win.len();
            let q = softmax_temp(lm.scores(win).view(), 1.0);
            let log_p = log_softmax(logits.row(t));
            let value = -q.dot(&log_p);
            let own = softmax_temp(logits.row(t), 1.0) - &q;
            let mut upstream = Vec::new();
            if !detach {
                let g_scores = softmax_vjp(q.view(), (-&log_p).view(), 1.0);
                for (k, g) in lm.scores_vjp(win, g_scores.view()).into_iter().enumerate() {
                    if let (Some(g), Slot::Row(r)) = (g, &slots[offset + k]) {
                        upstream.push((*r, g));
                    }
                }
            }
            (value, own, upstream)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = Array2::zeros((t_len, v));
    let mut grad_probs = Array2::<f64>::zeros((t_len, v));
    for (t, (value, own, upstream)) in per_position.into_iter().enumerate() {
        total += value;
        grad.row_mut(t).scaled_add(1.0, &own);
        for (r, g) in upstream {
            grad_probs.row_mut(r).scaled_add(1.0, &g);
        }
    }
    if !detach {
        for r in 0..t_len {
            grad.row_mut(r).scaled_add(1.0, &softmax_vjp(probs.row(r), grad_probs.row(r), tau_model));
        }
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Hard(TokenId),
    Row(usize),
}

/// Left-to-right fluency given the hard left context `x_l`.
pub fn f_lr_and_grad(
    y_soft: &SoftSequence,
    x_l: &TokenSeq,
    fwd: &dyn LanguageModel,
    tau_model: f64,
    detach: bool,
) -> Result<(f64, Array2<f64>), EnergyError> {
    fluency_and_grad(y_soft, fwd, tau_model, detach, |t| {
        x_l.ids().iter().map(|&i| Slot::Hard(i)).chain((0..t).map(Slot::Row)).collect()
    })
}

/// Right-to-left fluency: position `t` is predicted by the backward model from
/// `<bos>` followed by the rows after `t`, nearest last.
pub fn f_rl_and_grad(
    y_soft: &SoftSequence,
    bwd: &dyn LanguageModel,
    tau_model: f64,
    detach: bool,
) -> Result<(f64, Array2<f64>), EnergyError> {
    let t_len = y_soft.len();
    fluency_and_grad(y_soft, bwd, tau_model, detach, |t| {
        std::iter::once(Slot::Hard(Vocabulary::BOS_ID)).chain((t + 1..t_len).rev().map(Slot::Row)).collect()
    })
}

/// `λ_lr·f_lr + λ_rl·f_rl`.
pub fn f_flu(
    y_soft: &SoftSequence,
    x_l: &TokenSeq,
    fwd: &dyn LanguageModel,
    bwd: &dyn LanguageModel,
    lambda_lr: f64,
    lambda_rl: f64,
) -> Result<f64, EnergyError> {
    let lr = f_lr_and_grad(y_soft, x_l, fwd, 1.0, true)?.0;
    let rl = f_rl_and_grad(y_soft, bwd, 1.0, true)?.0;
    Ok(lambda_lr * lr + lambda_rl * rl)
}

/// Energy breakdown and the gradient of the total with respect to `ỹ`.
pub fn energy_and_grad(
    c: &Constraints<'_>,
    y_soft: &SoftSequence,
    cfg: &EnergyConfig,
) -> Result<(EnergyBreakdown, Array2<f64>), EnergyError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(EnergyError::InvalidConfig(errs.join("; ")));
    }
    let t_len = y_soft.len();
    let (f_sim, g_sim) = f_sim_and_grad(y_soft, c.y_star, cfg.ngram_n)?;
    let (f_cc, g_cc) = cc_loss_and_grad(c.x, y_soft, c.clf, cfg.gamma_for(t_len))?;
    let (mut f_lr, mut g_lr) = f_lr_and_grad(y_soft, c.x_l, c.fwd, cfg.tau_model, cfg.detach_lm)?;
    let (mut f_rl, mut g_rl) = f_rl_and_grad(y_soft, c.bwd, cfg.tau_model, cfg.detach_lm)?;
    if cfg.normalize {
        let k = 1.0 / t_len as f64;
        f_lr *= k;
        f_rl *= k;
        g_lr *= k;
        g_rl *= k;
    }
    for (name, value, grad) in [("f_sim", f_sim, &g_sim), ("f_cc", f_cc, &g_cc), ("f_lr", f_lr, &g_lr), ("f_rl", f_rl, &g_rl)] {
        if !value.is_finite() || !all_finite(grad.iter()) {
            return Err(EnergyError::NonFinite(name));
        }
    }
    let breakdown = EnergyBreakdown::combine(cfg, f_sim, f_cc, f_lr, f_rl);
    let mut grad = g_sim * cfg.lambda_a;
    grad.scaled_add(cfg.lambda_b, &g_cc);
    grad.scaled_add(cfg.lambda_c_lr, &g_lr);
    grad.scaled_add(cfg.lambda_c_rl, &g_rl);
    Ok((breakdown, grad))
}

pub fn energy(c: &Constraints<'_>, y_soft: &SoftSequence, cfg: &EnergyConfig) -> Result<EnergyBreakdown, EnergyError> {
    Ok(energy_and_grad(c, y_soft, cfg)?.0)
}

pub fn grad_energy(c: &Constraints<'_>, y_soft: &SoftSequence, cfg: &EnergyConfig) -> Result<Array2<f64>, EnergyError> {
    Ok(energy_and_grad(c, y_soft, cfg)?.1)
}

/// Mean entropy of the rows of `softmax(ỹ)`; a sharpness diagnostic.
pub fn mean_row_entropy(y_soft: &SoftSequence) -> f64 {
    let p = y_soft.probs(1.0);
    let h = p.map_axis(Axis(1), |r| -r.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>());
    h.mean().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassifierConfig, CnClassifier};
    use crate::gradcheck::{central_difference_matrix, relative_error};
    use crate::lm::{Direction, LanguageModelExt, NeuralLm, NeuralLmConfig, UniformLm};
    use crate::optim::stage_rng;
    use rand::Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["they are people too and deserve respect not hate"], 1)
    }

    struct Kit {
        x: TokenSeq,
        x_l: TokenSeq,
        y_star: TokenSeq,
        clf: CnClassifier,
        fwd: NeuralLm,
        bwd: NeuralLm,
    }

    fn kit(seed: u64) -> Kit {
        let v = vocab();
        let lm_cfg = NeuralLmConfig { embed_dim: 3, hidden: 5, ..Default::default() };
        let clf_cfg = ClassifierConfig { feature_dim: 12, hidden: 5, dim: 3, tau_join: 0.9, ..Default::default() };
        let x = v.encode("they are hate");
        let x_l = left_context(&x, &v.encode("not respect"));
        Kit {
            y_star: v.encode("they are people too"),
            clf: CnClassifier::new(v.clone(), &clf_cfg, seed),
            fwd: NeuralLm::new(v.clone(), Direction::Forward, &lm_cfg, seed + 100),
            bwd: NeuralLm::new(v.clone(), Direction::Backward, &lm_cfg, seed + 200),
            x,
            x_l,
        }
    }

    fn random_soft(seed: u64, t: usize, v: usize) -> Array2<f64> {
        let mut rng = stage_rng(seed, 77);
        Array2::from_shape_fn((t, v), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn f_sim_identity_and_disjoint() {
        let v = vocab();
        let y = v.encode("they are people too");
        let one_hot = SoftSequence::one_hot(&y, v.len(), 60.0).unwrap();
        assert!(f_sim(&one_hot, &y, 2).unwrap().abs() < 1e-12);
        let other = SoftSequence::one_hot(&v.encode("deserve respect not hate"), v.len(), 60.0).unwrap();
        assert!((f_sim(&other, &y, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(f_sim(&one_hot, &v.encode("they"), 2).is_err());
    }

    #[test]
    fn f_sim_matches_scalar_product_sum() {
        let v = vocab();
        let y_star = TokenSeq(vec![3, 4, 5, 6]);
        let logits = random_soft(1, 4, v.len());
        let soft = SoftSequence::new(logits.clone()).unwrap();
        let p: Vec<Vec<f64>> = (0..4).map(|t| softmax_temp(logits.row(t), 1.0).to_vec()).collect();
        let mut m = 0.0;
        for g in y_star.ids().windows(2) {
            for t in 0..3 {
                m += p[t][g[0]] * p[t + 1][g[1]];
            }
        }
        let got = 1.0 - f_sim(&soft, &y_star, 2).unwrap();
        assert!((got - m / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_precision_is_bounded_with_repeats() {
        let v = vocab();
        let y = v.encode("they are they are they are");
        let one_hot = SoftSequence::one_hot(&y, v.len(), 60.0).unwrap();
        assert!(f_sim(&one_hot, &y, 2).unwrap().abs() < 1e-12);
        assert_eq!(ngram_precision(&y, &v.encode("they are"), 2), Some(1.0 / 5.0));
    }

    #[test]
    fn uniform_fluency_closed_form() {
        let v = vocab();
        let uni = UniformLm { vocab: v.clone(), direction: Direction::Forward };
        let soft = SoftSequence::new(Array2::zeros((4, v.len()))).unwrap();
        let x_l = TokenSeq(vec![0]);
        let expected = 4.0 * (v.len() as f64).ln();
        let f = f_flu(&soft, &x_l, &uni, &uni, 0.9, 0.1).unwrap();
        assert!((f - expected).abs() < 1e-9);
        let lr_only = f_flu(&soft, &x_l, &uni, &uni, 1.0, 0.0).unwrap();
        assert!((lr_only - expected).abs() < 1e-9);
    }

    #[test]
    fn fluency_entropy_identity() {
        let k = kit(3);
        let v = vocab();
        // Rows equal to the LM's own predictions, built left to right.
        let mut rows = Array2::zeros((3, v.len()));
        for t in 0..3 {
            let q = if t == 0 {
                k.fwd.next_dist(&k.x_l).unwrap()
            } else {
                let prefix = SoftSequence::new(rows.slice(ndarray::s![..t, ..]).to_owned()).unwrap();
                k.fwd.next_dist_soft(&prefix, &k.x_l, 1.0).unwrap()
            };
            rows.row_mut(t).assign(&q.mapv(f64::ln));
        }
        let soft = SoftSequence::new(rows.clone()).unwrap();
        let (f, _) = f_lr_and_grad(&soft, &k.x_l, &k.fwd, 1.0, false).unwrap();
        let entropy: f64 = (0..3).map(|t| -rows.row(t).iter().map(|&l| l.exp() * l).sum::<f64>()).sum();
        assert!((f - entropy).abs() < 1e-9);
    }

    #[test]
    fn each_term_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let k = kit(seed);
            let v = vocab().len();
            let logits = random_soft(seed, 4, v);
            let soft = |l: &Array2<f64>| SoftSequence::new(l.clone()).unwrap();
            let s = soft(&logits);
            let checks: Vec<(Array2<f64>, Box<dyn Fn(&Array2<f64>) -> f64>)> = vec![
                (f_sim_and_grad(&s, &k.y_star, 2).unwrap().1, Box::new(|l| f_sim(&soft(l), &k.y_star, 2).unwrap())),
                (
                    f_lr_and_grad(&s, &k.x_l, &k.fwd, 1.0, false).unwrap().1,
                    Box::new(|l| f_lr_and_grad(&soft(l), &k.x_l, &k.fwd, 1.0, false).unwrap().0),
                ),
                (
                    f_rl_and_grad(&s, &k.bwd, 0.7, false).unwrap().1,
                    Box::new(|l| f_rl_and_grad(&soft(l), &k.bwd, 0.7, false).unwrap().0),
                ),
            ];
            for (i, (analytic, f)) in checks.into_iter().enumerate() {
                let fd = central_difference_matrix(f, &logits, 1e-5);
                let err = relative_error(&analytic, &fd);
                assert!(err < 1e-4, "seed {seed} term {i}: {err}");
            }
        }
    }

    #[test]
    fn total_gradient_and_linearity() {
        let k = kit(7);
        let c = Constraints { x: &k.x, x_l: &k.x_l, y_star: &k.y_star, clf: &k.clf, fwd: &k.fwd, bwd: &k.bwd };
        let logits = random_soft(7, 5, vocab().len());
        let cfg = EnergyConfig::default();
        let (b, g) = energy_and_grad(&c, &SoftSequence::new(logits.clone()).unwrap(), &cfg).unwrap();
        let fd = central_difference_matrix(|l| energy(&c, &SoftSequence::new(l.clone()).unwrap(), &cfg).unwrap().total, &logits, 1e-5);
        assert!(relative_error(&g, &fd) < 1e-4);

        let b2 = energy(&c, &SoftSequence::new(logits.clone()).unwrap(), &cfg.scaled(2.0)).unwrap();
        assert!((b2.total - 2.0 * b.total).abs() < 1e-12 * b.total.abs().max(1.0));
        let only_a = EnergyConfig { lambda_b: 0.0, lambda_c_lr: 0.0, lambda_c_rl: 0.0, ..cfg };
        let ba = energy(&c, &SoftSequence::new(logits.clone()).unwrap(), &only_a).unwrap();
        assert_eq!(ba.total, 0.25 * ba.f_sim);
        let recomposed = 0.25 * b.f_sim + 0.5 * b.f_cc + 0.225 * b.f_lr + 0.025 * b.f_rl;
        assert!((b.total - recomposed).abs() < 1e-12);
    }

    #[test]
    fn detached_gradient_matches_own_term() {
        let k = kit(2);
        let logits = random_soft(2, 3, vocab().len());
        let s = SoftSequence::new(logits.clone()).unwrap();
        let (_, g) = f_lr_and_grad(&s, &k.x_l, &k.fwd, 1.0, true).unwrap();
        // The detached gradient of row t is softmax(ỹ_t) − q_t, so each row sums to zero.
        for r in g.rows() {
            assert!(r.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(EnergyConfig::default().validate().is_empty());
        let bad = EnergyConfig { lambda_a: 0.0, lambda_b: 0.0, lambda_c_lr: 0.0, lambda_c_rl: 0.0, ..Default::default() };
        assert_eq!(bad.validate().len(), 1);
        assert_eq!(EnergyConfig { lambda_a: -1.0, ngram_n: 0, ..Default::default() }.validate().len(), 2);
    }
}
