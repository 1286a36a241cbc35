use aesg_core::irt::{estimate_abilities, fit_2pl, marginal_log_likelihood, ItemStatus};
use aesg_core::{irf, IrtConfig, ItemParameters, ResponseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

struct Simulated {
    matrix: ResponseMatrix,
    a: Vec<f64>,
    b: Vec<f64>,
    theta: Vec<f64>,
}

fn simulate(n: usize, k: usize, seed: u64) -> Simulated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.5)).collect();
    let b: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let theta: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut data = Vec::with_capacity(n * k);
    for &t in &theta {
        for j in 0..k {
            // written out directly so the simulator does not share code with the estimator
            let p = 1.0 / (1.0 + (-a[j] * (t - b[j])).exp());
            data.push(u8::from(rng.random::<f64>() < p));
        }
    }
    Simulated {
        matrix: ResponseMatrix::new(n, k, data).unwrap(),
        a,
        b,
        theta,
    }
}

#[test]
fn recovers_generating_parameters() {
    let sim = simulate(1000, 40, 2024);
    let config = IrtConfig::default();
    let fit = fit_2pl(&sim.matrix, &config).unwrap();
    assert!(fit.items.iter().all(|i| i.status == ItemStatus::Calibrated));
    let a_hat: Vec<f64> = fit.items.iter().map(|i| i.a).collect();
    let b_hat: Vec<f64> = fit.items.iter().map(|i| i.b).collect();
    let r_b = pearson(&b_hat, &sim.b);
    let r_a = pearson(&a_hat, &sim.a);
    let abilities = estimate_abilities(&sim.matrix, &fit.items, &config).unwrap();
    let mae = abilities
        .iter()
        .zip(&sim.theta)
        .map(|(e, t)| (e.theta - t).abs())
        .sum::<f64>()
        / 1000.0;
    assert!(r_b >= 0.95, "r(b) = {r_b}");
    assert!(r_a >= 0.85, "r(a) = {r_a}");
    assert!(mae <= 0.45, "mean |theta error| = {mae}");
}

#[test]
fn em_trace_is_monotone_on_random_matrices() {
    let config = IrtConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..50)
            .map(|_| {
                (0..20)
                    .map(|_| u8::from(rng.random::<f64>() < 0.5))
                    .collect()
            })
            .collect();
        let matrix = ResponseMatrix::from_rows(&rows).unwrap();
        let fit = fit_2pl(&matrix, &config).unwrap();
        for w in fit.trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs(),
                "seed {seed}: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn final_likelihood_matches_trace_tail() {
    let sim = simulate(200, 10, 3);
    let config = IrtConfig::default();
    let fit = fit_2pl(&sim.matrix, &config).unwrap();
    let ll = marginal_log_likelihood(&sim.matrix, &fit.items, &config);
    assert!(ll >= *fit.trace.last().unwrap() - 1e-9 * ll.abs());
}

#[test]
fn degenerate_columns_are_dropped() {
    let mut rows = vec![vec![1u8, 0, 1, 0]; 30];
    for (i, r) in rows.iter_mut().enumerate() {
        r[2] = u8::from(i % 3 == 0);
        r[3] = u8::from(i % 2 == 0);
    }
    let matrix = ResponseMatrix::from_rows(&rows).unwrap();
    let fit = fit_2pl(&matrix, &IrtConfig::default()).unwrap();
    let status: Vec<ItemStatus> = fit.items.iter().map(|i| i.status).collect();
    assert_eq!(
        status,
        [
            ItemStatus::DegenerateDropped,
            ItemStatus::DegenerateDropped,
            ItemStatus::Calibrated,
            ItemStatus::Calibrated
        ]
    );
}

#[test]
fn irf_point_symmetry_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let item =
            ItemParameters::calibrated(0, rng.random_range(0.05..5.0), rng.random_range(-4.0..4.0));
        let t = rng.random_range(-6.0..6.0);
        assert_eq!(irf(item.b, &item, 1.0), 0.5);
        assert!((irf(t, &item, 1.0) + irf(2.0 * item.b - t, &item, 1.0) - 1.0).abs() <= 1e-12);
        assert!(irf(t + 0.01, &item, 1.0) >= irf(t, &item, 1.0));
        // strict while the logistic is not saturated in f64
        if item.a * (t - item.b).abs() < 25.0 {
            assert!(irf(t + 0.01, &item, 1.0) > irf(t, &item, 1.0));
        }
    }
}
