#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use oddbound::losses::{dis_loss, logistic_loss, LossKind};
use oddbound::nn::Mlp;
use rand::Rng;

/// Straight-line forward pass over plain loops.
pub fn reference_forward(model: &Mlp, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let layers = model.weights().len();
    let mut rows = Vec::new();
    for r in 0..x.nrows() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for l in 0..layers {
            let w = &model.weights()[l];
            let b = &model.biases()[l];
            let mut z = vec![0.0; w.ncols()];
            for j in 0..w.ncols() {
                let mut s = b[j];
                for i in 0..w.nrows() {
                    s += a[i] * w[[i, j]];
                }
                z[j] = if l + 1 < layers && s < 0.0 { 0.0 } else { s };
            }
            a = z;
        }
        rows.push(a);
    }
    let k = model.output_dim();
    Array2::from_shape_fn((x.nrows(), k), |(i, j)| rows[i][j])
}

/// Mean weighted loss through the reference forward pass and the scalar
/// loss functions.
pub fn reference_loss(model: &Mlp, x: ArrayView2<'_, f64>, y: &[usize], loss: LossKind, w: Option<&[f64]>) -> f64 {
    let logits = reference_forward(model, x);
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let row = logits.row(i).to_vec();
            let l = match loss {
                LossKind::Logistic => logistic_loss(&row, y[i]).unwrap(),
                LossKind::Disagreement => dis_loss(&row, y[i]).unwrap(),
            };
            w.map_or(1.0, |w| w[i]) * l
        })
        .sum::<f64>()
        / n as f64
}

/// Smallest |pre-activation| over hidden units; finite differences are only
/// trusted away from ReLU kinks.
pub fn min_hidden_preactivation(model: &Mlp, x: ArrayView2<'_, f64>) -> f64 {
    let layers = model.weights().len();
    let mut min = f64::INFINITY;
    for r in 0..x.nrows() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for l in 0..layers - 1 {
            let w = &model.weights()[l];
            let b = &model.biases()[l];
            let z: Vec<f64> = (0..w.ncols())
                .map(|j| b[j] + (0..w.nrows()).map(|i| a[i] * w[[i, j]]).sum::<f64>())
                .collect();
            for v in &z {
                min = min.min(v.abs());
            }
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    min
}

pub struct GradCase {
    pub model: Mlp,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub loss: LossKind,
    pub weights: Option<Vec<f64>>,
}

/// Random model, batch, loss and optional weights, redrawn until every
/// hidden pre-activation is at least 1e-3 from zero.
pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = oddbound::seed::rng(seed);
    loop {
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=4)];
        for _ in 1..depth {
            dims.push(rng.gen_range(2..=6));
        }
        dims.push(rng.gen_range(2..=4));
        let model = Mlp::new(&dims, rng.gen()).unwrap();
        let n = rng.gen_range(1..=6);
        let x = Array2::from_shape_fn((n, dims[0]), |_| rng.gen_range(-2.0..2.0));
        let k = *dims.last().unwrap();
        let y = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let loss = if rng.gen() { LossKind::Logistic } else { LossKind::Disagreement };
        let weights = rng.gen::<bool>().then(|| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
        if depth == 1 || min_hidden_preactivation(&model, x.view()) > 1e-3 {
            return GradCase { model, x, y, loss, weights };
        }
    }
}

/// Largest relative error between analytic and central-difference
/// gradients, `|a − n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(case: &GradCase, step: f64, floor: f64) -> f64 {
    let w = case.weights.as_deref();
    let (_, grads) = case.model.loss_and_grads(case.x.view(), &case.y, case.loss, w).unwrap();
    let analytic: Vec<f64> = grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(gw, gb)| gw.iter().chain(gb.iter()).copied().collect::<Vec<_>>())
        .collect();
    let base = case.model.flat_params();
    let mut probe = case.model.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.set_flat_params(&p).unwrap();
        let up = reference_loss(&probe, case.x.view(), &case.y, case.loss, w);
        p[i] = base[i] - step;
        probe.set_flat_params(&p).unwrap();
        let down = reference_loss(&probe, case.x.view(), &case.y, case.loss, w);
        let numeric = (up - down) / (2.0 * step);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
