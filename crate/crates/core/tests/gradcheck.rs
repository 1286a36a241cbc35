//! Analytic gradients against central finite differences for every layout.

use aesg_core::scorer::{Gradients, ScoringModel};
use aesg_core::{Architecture, ModelDims};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const LAMBDA: f64 = 0.8;

struct Batch {
    embeddings: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    aux_targets: Vec<f64>,
}

fn batch(seed: u64, n: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v =
        |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    Batch {
        embeddings: (0..n).map(|_| v(16)).collect(),
        features: (0..n).map(|_| v(12)).collect(),
        targets: v(n),
        aux_targets: v(n),
    }
}

/// Composite batch loss; dropout masks are replayed from `dropout_seed`.
fn batch_loss(model: &ScoringModel, b: &Batch, dropout_seed: Option<u64>) -> f64 {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let n = b.targets.len() as f64;
    let mut total = 0.0;
    for i in 0..b.targets.len() {
        let r = rng.as_mut().map(|r| r as &mut dyn RngCore);
        let (p, _) = model.forward(&b.embeddings[i], &b.features[i], r).unwrap();
        let lambda = if model.has_aux() { LAMBDA } else { 1.0 };
        total += lambda * (p.main - b.targets[i]).powi(2);
        if let Some(aux) = p.aux {
            total += (1.0 - lambda) * (aux - b.aux_targets[i]).powi(2);
        }
    }
    total / n
}

fn analytic(model: &ScoringModel, b: &Batch, dropout_seed: Option<u64>) -> Vec<f64> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let n = b.targets.len() as f64;
    let mut grads = Gradients::zeros(model);
    for i in 0..b.targets.len() {
        let r = rng.as_mut().map(|r| r as &mut dyn RngCore);
        let (p, cache) = model.forward(&b.embeddings[i], &b.features[i], r).unwrap();
        let lambda = if model.has_aux() { LAMBDA } else { 1.0 };
        let d_main = 2.0 * lambda * (p.main - b.targets[i]) / n;
        let d_aux = p
            .aux
            .map_or(0.0, |a| 2.0 * (1.0 - lambda) * (a - b.aux_targets[i]) / n);
        model.backward(&cache, d_main, d_aux, &mut grads);
    }
    grads.flat()
}

fn max_relative_error(arch: Architecture, seed: u64, dropout: bool) -> f64 {
    let dims = ModelDims {
        grammar_width: 8,
        top_width: 8,
        ..ModelDims::new(arch, 16, 12)
    };
    let mut model = ScoringModel::new(arch, dims, seed).unwrap();
    // nonzero biases exercise the bias gradients
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let mut params = model.flat_params();
    for p in params.iter_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    model.set_flat_params(&params).unwrap();
    let b = batch(seed + 77, 3);
    let dropout_seed = dropout.then_some(seed + 5);
    let grad = analytic(&model, &b, dropout_seed);
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let mut plus = params.clone();
        plus[k] += H;
        let mut minus = params.clone();
        minus[k] -= H;
        model.set_flat_params(&plus).unwrap();
        let lp = batch_loss(&model, &b, dropout_seed);
        model.set_flat_params(&minus).unwrap();
        let lm = batch_loss(&model, &b, dropout_seed);
        let numeric = (lp - lm) / (2.0 * H);
        let scale = grad[k].abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((grad[k] - numeric).abs() / scale.max(1e-7));
        }
    }
    model.set_flat_params(&params).unwrap();
    worst
}

#[test]
fn all_architectures_match_finite_differences() {
    for arch in Architecture::ALL {
        for seed in 0..10 {
            let err = max_relative_error(arch, seed, false);
            assert!(
                err <= 1e-4,
                "{} seed {seed}: max relative error {err:e}",
                arch.name()
            );
        }
    }
}

#[test]
fn gradients_hold_with_replayed_dropout_masks() {
    for arch in Architecture::ALL {
        for seed in 0..3 {
            let err = max_relative_error(arch, seed, true);
            assert!(
                err <= 1e-4,
                "{} seed {seed} (dropout): max relative error {err:e}",
                arch.name()
            );
        }
    }
}
