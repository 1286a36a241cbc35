use aesg_core::scorer::{train, Dataset};
use aesg_core::{Architecture, ModelDims, ScoreScale, ScoringModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Targets are a linear function of the features; embeddings are noise.
fn linear_dataset(n: usize, seed: u64) -> Dataset {
    let (d, k) = (8, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(-0.3..0.3)).collect();
    let embeddings: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let features: Vec<f64> = (0..n * k)
        .map(|_| f64::from(u8::from(rng.random::<bool>())))
        .collect();
    let scale = ScoreScale::new(1, 0, 10).unwrap();
    let mut targets = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for row in features.chunks(k) {
        let y: f64 = row.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() - 0.3;
        let s = aesg_core::denormalize_prediction(y, &scale);
        scores.push(s);
        targets.push(aesg_core::normalize_score(s, &scale).unwrap());
    }
    let aux = targets.iter().map(|t| t * 0.5).collect();
    Dataset::new(d, k, embeddings, features, targets, scores)
        .unwrap()
        .with_aux(aux, None)
        .unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs: 5,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = linear_dataset(120, 1);
    let dev = linear_dataset(40, 2);
    let scale = ScoreScale::new(1, 0, 10).unwrap();
    for arch in Architecture::ALL {
        let dims = ModelDims {
            top_width: 32,
            ..ModelDims::new(arch, 8, 10)
        };
        let run = || {
            let mut model = ScoringModel::new(arch, dims.clone(), 3).unwrap();
            let history = train(&mut model, &data, Some(&dev), &scale, &config()).unwrap();
            (model, history)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1.flat_params(), m2.flat_params(), "{}", arch.name());
        assert_eq!(h1, h2, "{}", arch.name());
    }
}

#[test]
fn loss_decreases_over_first_epochs_on_linear_task() {
    let data = linear_dataset(200, 4);
    let scale = ScoreScale::new(1, 0, 10).unwrap();
    for arch in [Architecture::Cat, Architecture::Dual] {
        let dims = ModelDims {
            top_width: 32,
            ..ModelDims::new(arch, 8, 10)
        };
        let mut model = ScoringModel::new(arch, dims, 0).unwrap();
        let history = train(&mut model, &data, None, &scale, &config()).unwrap();
        let losses: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
        assert!(
            losses[0] > losses[1] && losses[1] > losses[2],
            "{}: {losses:?}",
            arch.name()
        );
    }
}

#[test]
fn training_leaves_inputs_untouched() {
    let data = linear_dataset(60, 5);
    let before = data.clone();
    let scale = ScoreScale::new(1, 0, 10).unwrap();
    let mut model = ScoringModel::new(
        Architecture::Dual,
        ModelDims::new(Architecture::Dual, 8, 10),
        1,
    )
    .unwrap();
    train(&mut model, &data, None, &scale, &config()).unwrap();
    assert_eq!(
        data.features
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        before
            .features
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
    assert_eq!(data.targets, before.targets);
}
