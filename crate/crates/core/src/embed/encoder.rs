use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{format_stance_input, EmbedError, EmbeddingSource, EmbeddingVector, FeatureHasher};
use crate::optim::Parameterized;
use crate::text::tokenize;

/// One tanh hidden layer followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Hidden activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpActivation {
    pub hidden: Array1<f64>,
    pub output: Array1<f64>,
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let init = |rows: usize, cols: usize, rng: &mut R| {
            let normal = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("valid std");
            Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
        };
        let w1 = init(hidden, input, rng);
        let w2 = init(output, hidden, rng);
        Self { w1, b1: Array1::zeros(hidden), w2, b2: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> MlpActivation {
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(f64::tanh);
        let output = self.w2.dot(&hidden) + &self.b2;
        MlpActivation { hidden, output }
    }

    /// Accumulates parameter gradients into `grad` (flat, in [`Parameterized`]
    /// order) and returns the gradient with respect to the input.
    pub fn backward_into(
        &self,
        x: ArrayView1<f64>,
        act: &MlpActivation,
        grad_out: ArrayView1<f64>,
        grad: &mut [f64],
    ) -> Array1<f64> {
        let (i, h, o) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        let (g_w1, rest) = grad.split_at_mut(h * i);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(o * h);
        for r in 0..o {
            let go = grad_out[r];
            if go == 0.0 {
                continue;
            }
            g_b2[r] += go;
            for c in 0..h {
                g_w2[r * h + c] += go * act.hidden[c];
            }
        }
        let g_hidden = self.w2.t().dot(&grad_out);
        let g_pre = &g_hidden * &act.hidden.mapv(|a| 1.0 - a * a);
        for r in 0..h {
            let gp = g_pre[r];
            if gp == 0.0 {
                continue;
            }
            g_b1[r] += gp;
            for c in 0..i {
                g_w1[r * i + c] += gp * x[c];
            }
        }
        self.w1.t().dot(&g_pre)
    }

    /// Input gradient only, without touching parameter gradients.
    pub fn backward_input(&self, act: &MlpActivation, grad_out: ArrayView1<f64>) -> Array1<f64> {
        let g_hidden = self.w2.t().dot(&grad_out);
        let g_pre = &g_hidden * &act.hidden.mapv(|a| 1.0 - a * a);
        self.w1.t().dot(&g_pre)
    }
}

impl Parameterized for MlpEncoder {
    fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn params(&self) -> Vec<f64> {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter()).copied().collect()
    }

    fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        for v in self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()).chain(self.b2.iter_mut()) {
            *v = it.next().expect("length checked");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Stance,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { feature_dim: 256, hidden: 64, dim: 32 }
    }
}

/// Toy sentence encoder: hashed token features, mean-pooled, through an
/// [`MlpEncoder`]. Pure function of its parameters and the input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub kind: EncoderKind,
    pub hasher: FeatureHasher,
    pub mlp: MlpEncoder,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    format: String,
    version: u32,
    kind: EncoderKind,
    feature_dim: usize,
    hidden: usize,
    dim: usize,
    mlp: MlpEncoder,
}

const ENCODER_FORMAT: &str = "counterspeech-encoder";

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(kind: EncoderKind, config: EncoderConfig, rng: &mut R) -> Self {
        Self {
            kind,
            hasher: FeatureHasher::new(config.feature_dim),
            mlp: MlpEncoder::new(config.feature_dim, config.hidden, config.dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// The exact string fed to the encoder for a statement about `target`.
    /// Stance encoders use the `[CLS] target [SEP] statement [SEP]` template;
    /// semantic encoders see the raw statement.
    pub fn input_text(&self, target: &str, statement: &str) -> String {
        match self.kind {
            EncoderKind::Stance if !target.is_empty() && !statement.is_empty() => {
                format_stance_input(target, statement).expect("checked nonempty")
            }
            _ => statement.to_string(),
        }
    }

    pub fn features(&self, text: &str) -> Array1<f64> {
        self.hasher.mean_features(&tokenize(text))
    }

    pub fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        EmbeddingVector::new(self.mlp.forward(self.features(text).view()).output)
    }

    pub fn encode_statement(&self, target: &str, statement: &str) -> Result<EmbeddingVector, EmbedError> {
        self.encode(&self.input_text(target, statement))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let file = EncoderFile {
            format: ENCODER_FORMAT.into(),
            version: 1,
            kind: self.kind,
            feature_dim: self.hasher.dim,
            hidden: self.mlp.hidden_dim(),
            dim: self.dim(),
            mlp: self.mlp.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| EmbedError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let file: EncoderFile = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| EmbedError::Format(e.to_string()))?;
        if file.format != ENCODER_FORMAT {
            return Err(EmbedError::Format(format!("unexpected format {:?}", file.format)));
        }
        let m = &file.mlp;
        if m.input_dim() != file.feature_dim || m.hidden_dim() != file.hidden || m.output_dim() != file.dim {
            return Err(EmbedError::Format("header dimensions disagree with parameters".into()));
        }
        Ok(Self { kind: file.kind, hasher: FeatureHasher::new(file.feature_dim), mlp: file.mlp })
    }
}

impl Parameterized for TextEncoder {
    fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.mlp.params()
    }

    fn set_params(&mut self, flat: &[f64]) {
        self.mlp.set_params(flat)
    }
}

impl EmbeddingSource for TextEncoder {
    fn embed(&self, _id: &str, target: &str, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.encode_statement(target, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::stage_rng;

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = stage_rng(3, 0);
        let mlp = MlpEncoder::new(5, 4, 3, &mut rng);
        let x = Array1::from(vec![0.3, -0.2, 0.9, 0.0, -0.5]);
        let g_out = Array1::from(vec![1.0, -0.5, 0.25]);
        let act = mlp.forward(x.view());
        let mut grad = vec![0.0; mlp.num_params()];
        let g_x = mlp.backward_into(x.view(), &act, g_out.view(), &mut grad);
        let objective = |m: &MlpEncoder, x: &Array1<f64>| m.forward(x.view()).output.dot(&g_out);
        let h = 1e-6;
        let base = mlp.params();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            let mut plus = mlp.clone();
            plus.set_params(&p);
            p[k] -= 2.0 * h;
            let mut minus = mlp.clone();
            minus.set_params(&p);
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7, "param {k}: {fd} vs {}", grad[k]);
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (objective(&mlp, &xp) - objective(&mlp, &xm)) / (2.0 * h);
            assert!((fd - g_x[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn stance_input_template_applied() {
        let enc = TextEncoder::new(EncoderKind::Stance, EncoderConfig::default(), &mut stage_rng(1, 0));
        assert_eq!(enc.input_text("WOMEN", "they are equal"), "[CLS] WOMEN [SEP] they are equal [SEP]");
        let sem = TextEncoder { kind: EncoderKind::Semantic, ..enc.clone() };
        assert_eq!(sem.input_text("WOMEN", "they are equal"), "they are equal");
    }

    #[test]
    fn save_load_round_trip() {
        let enc = TextEncoder::new(EncoderKind::Semantic, EncoderConfig { feature_dim: 16, hidden: 8, dim: 4 }, &mut stage_rng(2, 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        enc.save(&path).unwrap();
        assert_eq!(TextEncoder::load(&path).unwrap(), enc);
    }
}
