//! Stance and semantic embedding spaces.
//!
//! Two interchangeable embedding sources back retrieval: the trainable
//! [`TextEncoder`] and [`EmbeddingTable`], which serves precomputed vectors
//! loaded from a text file so that vectors from a real sentence model can be
//! plugged in.

mod contrastive;
mod encoder;
mod features;
mod pairs;
mod table;

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

pub use contrastive::{
    contrastive_loss, contrastive_loss_and_grad, contrastive_loss_embeddings, cosine_margin,
    train_encoder, train_stance_encoder, ContrastiveGrads, TrainConfig, TrainedEncoder,
};
pub use encoder::{EncoderConfig, EncoderKind, MlpActivation, MlpEncoder, TextEncoder};
pub use features::FeatureHasher;
pub use pairs::{build_pairs, PairSet, StanceStatement, TriplePair};
pub use table::EmbeddingTable;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("degenerate embedding (zero norm)")]
    Degenerate,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("empty embedding")]
    Empty,
    #[error("non-finite similarity in contrastive loss")]
    NonFiniteSimilarity,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no embedding stored for id {0:?}")]
    MissingId(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Encoder as of the last epoch with a finite loss.
        last_finite: Box<TrainedEncoder>,
    },
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite, nonempty dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Array1<f64>);

impl EmbeddingVector {
    pub fn new(values: Array1<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Empty);
        }
        if !crate::math::all_finite(values.iter()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(Array1::from(v))
    }
}

/// Cosine similarity `uᵀv / (‖u‖‖v‖)`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_raw(u.view(), v.view())
}

pub(crate) fn cosine_raw(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch(u.len(), v.len()));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::Degenerate);
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// `[CLS] target [SEP] statement [SEP]`.
pub fn format_stance_input(target: &str, statement: &str) -> Result<String, EmbedError> {
    if target.trim().is_empty() || statement.trim().is_empty() {
        return Err(EmbedError::InvalidArgument("target and statement must be nonempty".into()));
    }
    Ok(format!("[CLS] {target} [SEP] {statement} [SEP]"))
}

/// Inverse of [`format_stance_input`].
pub fn parse_stance_input(text: &str) -> Option<(&str, &str)> {
    let rest = text.strip_prefix("[CLS] ")?.strip_suffix(" [SEP]")?;
    rest.split_once(" [SEP] ")
}

/// Anything that can embed an item for retrieval. `id` identifies the item
/// (post, comment or hate-speech sample), `target` is the label the stance is
/// taken towards, `text` the item text.
pub trait EmbeddingSource: Send + Sync {
    fn embed(&self, id: &str, target: &str, text: &str) -> Result<EmbeddingVector, EmbedError>;
}
