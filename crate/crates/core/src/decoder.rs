//! Langevin decoding of a soft sequence under the constraint energy.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_and_grad, Constraints, EnergyBreakdown, EnergyConfig, EnergyError};
use crate::lm::{LanguageModel, LanguageModelExt, LmError, SoftSequence};
use crate::math::{all_finite, argmax, softmax_temp};
use crate::optim::stage_rng;
use crate::text::{TokenSeq, Vocabulary};

/// The counter prompt shared by retrieval fitness and the fluency context.
pub const COUNTER_PROMPT: &str = "However, I disagree.";

const NOISE_STREAM: u64 = 11;
const SAMPLE_STREAM: u64 = 12;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("retrieved knowledge is empty")]
    EmptyKnowledge,
    #[error("non-finite soft sequence after the update at iteration {iteration}")]
    NonFinite { iteration: usize, partial: Box<DecodeTrace> },
    #[error("update produced non-finite logits")]
    NonFiniteUpdate,
    #[error("energy evaluation failed at iteration {iteration}: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: EnergyError,
        partial: Box<DecodeTrace>,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseDecay {
    /// `σ₀ (1 − n/N)`.
    Linear,
    /// `σ₀ rateⁿ`.
    Exponential { rate: f64 },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscretizeMode {
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub max_length: usize,
    pub sigma0: f64,
    pub noise_decay: NoiseDecay,
    pub discretize_temp: f64,
    pub discretize_mode: DiscretizeMode,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 0.1,
            max_length: 30,
            sigma0: 1.0,
            noise_decay: NoiseDecay::Linear,
            discretize_temp: 1.0,
            discretize_mode: DiscretizeMode::Argmax,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.iterations == 0 {
            errs.push("decoder: iterations must be >= 1".to_string());
        }
        errs.extend(self.validate_step());
        errs
    }

    fn validate_step(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            errs.push("decoder: step_size must be > 0".to_string());
        }
        if self.max_length == 0 {
            errs.push("decoder: max_length must be >= 1".to_string());
        }
        if !(self.sigma0 >= 0.0) || !self.sigma0.is_finite() {
            errs.push("decoder: sigma0 must be >= 0".to_string());
        }
        if let NoiseDecay::Exponential { rate } = self.noise_decay {
            if !(0.0..=1.0).contains(&rate) {
                errs.push("decoder: exponential noise rate must lie in [0, 1]".to_string());
            }
        }
        if !(self.discretize_temp > 0.0) {
            errs.push("decoder: discretize_temp must be > 0".to_string());
        }
        errs
    }

    /// Noise standard deviation at iteration `n`.
    pub fn sigma(&self, n: usize) -> f64 {
        match self.noise_decay {
            NoiseDecay::Linear => self.sigma0 * (1.0 - n as f64 / self.iterations.max(1) as f64).max(0.0),
            NoiseDecay::Exponential { rate } => self.sigma0 * rate.powi(n as i32),
            NoiseDecay::Constant => self.sigma0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    /// Energy before every update plus the final one.
    pub energies: Vec<EnergyBreakdown>,
    pub final_soft: SoftSequence,
    pub tokens: TokenSeq,
    pub y_star: TokenSeq,
    pub provenance: Option<String>,
}

impl DecodeTrace {
    /// One JSON object per line: `iter, f_sim, f_cc, f_lr, f_rl, total`.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            iter: usize,
            #[serde(flatten)]
            energy: &'a EnergyBreakdown,
        }
        for (iter, energy) in self.energies.iter().enumerate() {
            serde_json::to_writer(&mut w, &Line { iter, energy })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text: String,
    pub trace: DecodeTrace,
}

/// Initial soft sequence of exactly `max_length` rows: the forward model's
/// teacher-forced logits over `y*`, then its greedy continuation.
pub fn init_from_knowledge(y_star: &TokenSeq, fwd: &dyn LanguageModel, max_length: usize) -> Result<SoftSequence, DecodeError> {
    if y_star.is_empty() {
        return Err(DecodeError::EmptyKnowledge);
    }
    if max_length == 0 {
        return Err(DecodeError::InvalidConfig("max_length must be >= 1".into()));
    }
    let keep = y_star.len().min(max_length);
    let head = TokenSeq(y_star.ids()[..keep].to_vec());
    let teacher = fwd.logits_of(&head)?;
    let mut rows = Array2::zeros((max_length, fwd.vocab().len()));
    rows.slice_mut(s![..keep, ..]).assign(&teacher.logits());
    if keep < max_length {
        let (cont, _) = fwd.greedy_continuation(&head.with_bos(), max_length - keep)?;
        rows.slice_mut(s![keep.., ..]).assign(&cont);
    }
    Ok(SoftSequence::new(rows)?)
}

/// `ỹ − η·grad + ε` with `ε ~ N(0, σ²)` elementwise.
pub fn langevin_step<R: Rng + ?Sized>(
    y_soft: &SoftSequence,
    grad: &Array2<f64>,
    step_size: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<SoftSequence, DecodeError> {
    if grad.dim() != y_soft.logits().dim() {
        return Err(DecodeError::InvalidConfig("gradient shape does not match the soft sequence".into()));
    }
    let mut next = y_soft.logits().to_owned();
    next.scaled_add(-step_size, grad);
    if sigma > 0.0 {
        for v in next.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    if !all_finite(next.iter()) {
        return Err(DecodeError::NonFiniteUpdate);
    }
    Ok(SoftSequence::new(next)?)
}

/// Token per row, by argmax or by sampling `softmax(ỹ/τ_d)`, cut at the first
/// `<eos>`.
pub fn discretize<R: Rng + ?Sized>(y_soft: &SoftSequence, mode: DiscretizeMode, tau: f64, rng: &mut R) -> TokenSeq {
    let mut ids = Vec::with_capacity(y_soft.len());
    for row in y_soft.logits().rows() {
        let id = match mode {
            DiscretizeMode::Argmax => argmax(row),
            DiscretizeMode::Sample => {
                let p = softmax_temp(row, tau);
                WeightedIndex::new(p.iter()).map(|d| d.sample(rng)).unwrap_or_else(|_| argmax(row))
            }
        };
        if id == Vocabulary::EOS_ID {
            break;
        }
        ids.push(id);
    }
    TokenSeq(ids)
}

/// Runs the Langevin loop from the knowledge initialization and discretizes.
pub fn decode(c: &Constraints<'_>, energy_cfg: &EnergyConfig, cfg: &DecoderConfig) -> Result<Decoded, DecodeError> {
    let errs = cfg.validate_step();
    if !errs.is_empty() {
        return Err(DecodeError::InvalidConfig(errs.join("; ")));
    }
    let mut y = init_from_knowledge(c.y_star, c.fwd, cfg.max_length)?;
    let mut noise = stage_rng(cfg.seed, NOISE_STREAM);
    let mut energies = Vec::with_capacity(cfg.iterations + 1);
    let partial = |energies: &Vec<EnergyBreakdown>, y: &SoftSequence| {
        Box::new(DecodeTrace {
            energies: energies.clone(),
            final_soft: y.clone(),
            tokens: y.argmax(),
            y_star: c.y_star.clone(),
            provenance: None,
        })
    };
    for n in 0..=cfg.iterations {
        let (breakdown, grad) = match energy_and_grad(c, &y, energy_cfg) {
            Ok(v) => v,
            Err(source) => return Err(DecodeError::Step { iteration: n, source, partial: partial(&energies, &y) }),
        };
        energies.push(breakdown);
        if n == cfg.iterations {
            break;
        }
        y = match langevin_step(&y, &grad, cfg.step_size, cfg.sigma(n), &mut noise) {
            Ok(next) => next,
            Err(_) => return Err(DecodeError::NonFinite { iteration: n, partial: partial(&energies, &y) }),
        };
    }
    let tokens = discretize(&y, cfg.discretize_mode, cfg.discretize_temp, &mut stage_rng(cfg.seed, SAMPLE_STREAM));
    let text = c.fwd.vocab().decode(&tokens);
    Ok(Decoded {
        text,
        trace: DecodeTrace { energies, final_soft: y, tokens, y_star: c.y_star.clone(), provenance: None },
    })
}
