//! Evaluates the decoding energy on a random soft sequence and checks its
//! analytic gradient against central differences.
//!
//! `cargo run --release --example energy_gradients`

use ndarray::Array2;
use rand::Rng;

use counterspeech::classifier::{ClassifierConfig, CnClassifier};
use counterspeech::energy::{energy, energy_and_grad, left_context, Constraints, EnergyConfig};
use counterspeech::gradcheck::{central_difference_matrix, relative_error};
use counterspeech::lm::{Direction, NeuralLm, NeuralLmConfig, SoftSequence};
use counterspeech::optim::stage_rng;
use counterspeech::text::Vocabulary;

fn main() -> anyhow::Result<()> {
    let vocab = Vocabulary::build(["they are people too and deserve respect not hate"], 1);
    let lm = NeuralLmConfig { embed_dim: 4, hidden: 8, ..Default::default() };
    let fwd = NeuralLm::new(vocab.clone(), Direction::Forward, &lm, 1);
    let bwd = NeuralLm::new(vocab.clone(), Direction::Backward, &lm, 2);
    let clf = CnClassifier::new(vocab.clone(), &ClassifierConfig::default(), 3);
    let x = vocab.encode("they deserve hate");
    let x_l = left_context(&x, &vocab.encode("not"));
    let y_star = vocab.encode("they are people too");
    let c = Constraints { x: &x, x_l: &x_l, y_star: &y_star, clf: &clf, fwd: &fwd, bwd: &bwd };

    let mut rng = stage_rng(0, 0);
    let logits = Array2::from_shape_fn((4, vocab.len()), |_| rng.random_range(-1.0..1.0));
    let cfg = EnergyConfig::default();
    let (parts, grad) = energy_and_grad(&c, &SoftSequence::new(logits.clone())?, &cfg)?;
    println!("energy {:.6}", parts.total);
    println!("  terms {:?}", parts.weighted(&cfg));
    let numeric = central_difference_matrix(|m| energy(&c, &SoftSequence::new(m.clone()).unwrap(), &cfg).unwrap().total, &logits, 1e-5);
    println!("gradient relative error vs central differences: {:.2e}", relative_error(&grad, &numeric));
    Ok(())
}
