mod common;

use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use oddbound::data::{Dataset, Domain};
use oddbound::losses::LossKind;
use oddbound::nn::{accuracy, argmax, train, Mlp, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn forward_matches_reference_2_16_16_2() {
    let model = Mlp::new(&[2, 16, 16, 2], 42).unwrap();
    let x = array![[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1], [0.0, 0.0]];
    let got = model.forward(x.view()).unwrap();
    let want = common::reference_forward(&model, x.view());
    for (g, w) in got.iter().zip(want.iter()) {
        assert_abs_diff_eq!(g, w, epsilon = 1e-10);
    }
}

#[test]
fn identity_layer_passes_input_through() {
    let model = Mlp::identity(2).unwrap();
    let out = model.forward(array![[3.0, -1.0]].view()).unwrap();
    assert_eq!(out, array![[3.0, -1.0]]);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let case = common::random_grad_case(1000 + seed);
        let err = common::max_gradient_error(&case, 1e-5, 1e-6);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

fn blobs(seed: u64, n: usize) -> (Array2<f64>, Vec<usize>) {
    let mut rng = oddbound::seed::rng(seed);
    let mut bm = oddbound::seed::BoxMuller::new();
    let mut x = Array2::zeros((2 * n, 2));
    let mut y = vec![0; 2 * n];
    for i in 0..2 * n {
        let c = i % 2;
        let centre = if c == 0 { [-2.0, -2.0] } else { [2.0, 2.0] };
        x[[i, 0]] = centre[0] + 0.5 * bm.sample(&mut rng);
        x[[i, 1]] = centre[1] + 0.5 * bm.sample(&mut rng);
        y[i] = c;
    }
    (x, y)
}

/// Rosenblatt perceptron with a bias term; returns training accuracy.
fn perceptron_accuracy(x: &Array2<f64>, y: &[usize]) -> f64 {
    let mut w = [0.0f64; 3];
    for _ in 0..100 {
        let mut mistakes = 0;
        for (i, row) in x.rows().into_iter().enumerate() {
            let t = if y[i] == 1 { 1.0 } else { -1.0 };
            let s = w[0] * row[0] + w[1] * row[1] + w[2];
            if t * s <= 0.0 {
                w[0] += t * row[0];
                w[1] += t * row[1];
                w[2] += t;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            break;
        }
    }
    let hits = x
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(r, &t)| ((w[0] * r[0] + w[1] * r[1] + w[2]) > 0.0) == (t == 1))
        .count();
    hits as f64 / y.len() as f64
}

#[test]
fn mlp_separates_blobs_like_a_perceptron() {
    let (x, y) = blobs(3, 200);
    assert!(perceptron_accuracy(&x, &y) >= 0.99, "blobs not separable");
    let data = Dataset::new(x.clone(), y.iter().map(|&v| v as i64).collect(), Domain::Source).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 300,
        ..TrainConfig::default()
    };
    let out = train(Mlp::new(&[2, 16, 16, 2], 5).unwrap(), &data, LossKind::Logistic, None, &cfg).unwrap();
    assert!(accuracy(&out.model, x.view(), &y).unwrap() >= 0.99);
}

#[test]
fn same_seed_same_parameters_and_trace() {
    let (x, y) = blobs(9, 50);
    let data = Dataset::new(x, y.iter().map(|&v| v as i64).collect(), Domain::Source).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 50,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || train(Mlp::new(&[2, 8, 2], 4).unwrap(), &data, LossKind::Logistic, None, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model.flat_params(), b.model.flat_params());
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn argmax_examples() {
    assert_eq!(argmax(&[0.2, 0.9]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

proptest! {
    #[test]
    fn prediction_shift_invariant(row in prop::collection::vec(-50.0f64..50.0, 2..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        // Shifting can merge near-ties through rounding; only compare clear winners.
        let best = row[argmax(&row)];
        let runner_up = row.iter().enumerate().filter(|(i, _)| *i != argmax(&row)).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(best - runner_up > 1e-9);
        prop_assert_eq!(argmax(&row), argmax(&shifted));
    }

    #[test]
    fn forward_matches_reference_on_random_models(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = oddbound::seed::rng(seed);
        let dims = [3, rng.gen_range(1..8), rng.gen_range(1..8), 4];
        let model = Mlp::new(&dims, seed).unwrap();
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-3.0..3.0));
        let got = model.forward(x.view()).unwrap();
        let want = common::reference_forward(&model, x.view());
        for (g, w) in got.iter().zip(want.iter()) {
            prop_assert!((g - w).abs() <= 1e-10);
        }
    }

    #[test]
    fn save_load_round_trip(seed in any::<u64>()) {
        let model = Mlp::new(&[3, 5, 2], seed).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!(back, model);
    }
}
