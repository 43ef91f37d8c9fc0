//! Retrieval-augmented zero-shot counter-narrative generation.

pub mod corpus;
pub mod decoder;
pub mod classifier;
pub mod embed;
pub mod energy;
pub mod eval;
pub mod gradcheck;
pub mod lm;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod retrieve;
pub mod text;
