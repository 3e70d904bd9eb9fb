use ndarray::Array2;
use oddbound::bounds::{
    assumption2_gap, bound_report, concentration, dis2_discrepancy, odd_discrepancy, overlap_discrepancy,
    split_bound_report, weighted_discrepancy, BoundConfig, DiscrepancyMode,
};
use oddbound::critic::{find_critic, CriticConfig, CriticMethod};
use oddbound::data::{generate_pair, Dataset, DatasetPair, Domain, SyntheticConfig};
use oddbound::losses::{dis2_objective, odd_objective, LossKind};
use oddbound::nn::{train, Mlp, TrainConfig};
use oddbound::overlap::{OverlapWeights, WeightMode};
use proptest::prelude::*;

fn trained_h(split: &DatasetPair, seed: u64) -> Mlp {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 200,
        seed,
        convergence_tol: 0.0,
        ..TrainConfig::default()
    };
    train(Mlp::new(&[2, 16, 16, 2], seed).unwrap(), &split.source, LossKind::Logistic, None, &cfg)
        .unwrap()
        .model
}

fn small_critic(method: CriticMethod, seed: u64) -> CriticConfig {
    let mut c = CriticConfig::with_method(method);
    c.restarts = 1;
    c.train.max_epochs = 100;
    c.train.learning_rate = 1e-2;
    c.train.seed = seed;
    c
}

fn standard_fixture(seed: u64) -> oddbound::data::SyntheticSplits {
    generate_pair(&SyntheticConfig { n_train: 200, n_val: 200, seed, ..SyntheticConfig::default() }).unwrap()
}

#[test]
fn dis2_critic_discrepancy_is_positive_on_separated_pair() {
    let mut total = 0.0;
    for s in 0..20 {
        let split = standard_fixture(s);
        let h = trained_h(&split.train, s);
        let result = find_critic(&h, &split.train, None, &small_critic(CriticMethod::Dis2, s)).unwrap();
        let d = dis2_discrepancy(&h, &result.critic, &split.train).unwrap();
        assert!(d > 0.0, "seed {s}: discrepancy {d}");
        total += d;
    }
    assert!(total / 20.0 > 0.0);
}

#[test]
fn confident_critic_objective_terms() {
    let split = standard_fixture(4);
    let h = trained_h(&split.train, 4);
    let ps = h.predict(split.train.source.x()).unwrap();
    let pt = h.predict(split.train.target.x()).unwrap();
    let (src, _) = h.loss_and_grads(split.train.source.x(), &ps, LossKind::Logistic, None).unwrap();
    let (tgt, _) = h.loss_and_grads(split.train.target.x(), &pt, LossKind::Disagreement, None).unwrap();
    assert!(src < 0.2, "source term {src}");
    assert!(tgt > 1.0, "target term {tgt}");
    let total = dis2_objective(&h, split.train.source.x(), &ps, split.train.target.x(), &pt).unwrap();
    assert!((total - (src + tgt)).abs() < 1e-12);
}

#[test]
fn odd_objective_is_linear_and_monotone_in_target_weights() {
    let split = standard_fixture(5);
    let h = trained_h(&split.train, 5);
    let critic = Mlp::new(&[2, 16, 16, 2], 99).unwrap();
    let (s, t) = (&split.train.source, &split.train.target);
    let ps = h.predict(s.x()).unwrap();
    let pt = h.predict(t.x()).unwrap();
    let w: Vec<f64> = (0..t.n()).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
    let obj = |tw: Vec<f64>| {
        let ow = OverlapWeights::new(vec![1.0; s.n()], tw, WeightMode::Soft).unwrap();
        odd_objective(&critic, s.x(), &ps, t.x(), &pt, &ow, false).unwrap()
    };
    let zero = obj(vec![0.0; t.n()]);
    let full = obj(w.clone());
    let half = obj(w.iter().map(|v| v / 2.0).collect());
    assert!(((half - zero) * 2.0 - (full - zero)).abs() < 1e-12);
    let mut bumped = w.clone();
    bumped[3] = (bumped[3] + 0.5).min(1.0);
    assert!(obj(bumped) >= full);
}

#[test]
fn odd_with_ones_matches_dis2_critic() {
    let split = standard_fixture(6);
    let h = trained_h(&split.train, 6);
    let ones = OverlapWeights::ones(split.train.source.n(), split.train.target.n());
    let a = find_critic(&h, &split.train, None, &small_critic(CriticMethod::Dis2, 3)).unwrap();
    let b = find_critic(&h, &split.train, Some(&ones), &small_critic(CriticMethod::OddHard, 3)).unwrap();
    assert_eq!(a.critic, b.critic);
    assert_eq!(a.empirical_discrepancy.to_bits(), b.empirical_discrepancy.to_bits());
}

#[test]
fn assumption2_gap_identical_domains_small_on_average() {
    let mut total = 0.0;
    for s in 0..20 {
        let split = generate_pair(&SyntheticConfig {
            overlap_factor: 1.0,
            n_train: 300,
            n_val: 300,
            seed: 900 + s,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let h = trained_h(&split.train, s);
        let w = OverlapWeights::new(
            vec![0.5; split.val.source.n()],
            vec![0.5; split.val.target.n()],
            WeightMode::Soft,
        )
        .unwrap();
        total += assumption2_gap(&h, &split.val, &w).unwrap();
    }
    assert!((total / 20.0).abs() <= 0.05, "mean gap {}", total / 20.0);
}

#[test]
fn bound_report_split_identity_and_arithmetic() {
    let split = standard_fixture(8);
    let h = trained_h(&split.train, 8);
    let result = find_critic(&h, &split.train, None, &small_critic(CriticMethod::Dis2, 1)).unwrap();
    let w = OverlapWeights::new(
        (0..split.val.source.n()).map(|i| (i % 7) as f64 / 6.0).collect(),
        (0..split.val.target.n()).map(|i| (i % 5) as f64 / 4.0).collect(),
        WeightMode::Soft,
    )
    .unwrap();
    for mode in [DiscrepancyMode::Full, DiscrepancyMode::NonoverlapSoft] {
        let cfg = BoundConfig { mode, ..BoundConfig::default() };
        let r = bound_report(&h, &result, &split.val, &split.val.source, Some(&w), &cfg).unwrap();
        assert!((r.predicted_accuracy_lower + r.selected_discrepancy + r.concentration_term - r.source_val_accuracy).abs() <= 1e-12);
        let sb = split_bound_report(&r);
        assert!((sb.total - (r.source_val_error + r.discrepancy_full + r.concentration_term)).abs() <= 1e-12);
    }
    let ones = OverlapWeights::ones(split.val.source.n(), split.val.target.n());
    let cfg = BoundConfig { mode: DiscrepancyMode::NonoverlapHard, ..BoundConfig::default() };
    let r = bound_report(&h, &result, &split.val, &split.val.source, Some(&ones), &cfg).unwrap();
    assert_eq!(r.overlap_discrepancy, 0.0);
    assert_eq!(r.discrepancy_nonoverlap, r.discrepancy_full);
}

#[test]
fn unlabeled_target_has_no_validity() {
    let split = standard_fixture(10);
    let h = trained_h(&split.train, 10);
    let result = find_critic(&h, &split.train, None, &small_critic(CriticMethod::Dis2, 1)).unwrap();
    let target = Dataset::unlabeled(split.val.target.features().clone(), Domain::Target).unwrap();
    let pair = DatasetPair::new(split.val.source.clone(), target).unwrap();
    let r = bound_report(&h, &result, &pair, &pair.source, None, &BoundConfig::default()).unwrap();
    assert_eq!(r.valid, None);
    assert_eq!(r.true_target_accuracy, None);
}

/// Weighted disagreement recomputed from raw indicator sums.
fn brute_force(hs: &[usize], cs: &[usize], ht: &[usize], ct: &[usize], ws: &[f64], wt: &[f64]) -> (f64, f64, f64) {
    let mean = |h: &[usize], c: &[usize], w: &dyn Fn(usize) -> f64| {
        let mut s = 0.0;
        for i in 0..h.len() {
            if h[i] != c[i] {
                s += w(i);
            }
        }
        s / h.len() as f64
    };
    let full = mean(ht, ct, &|_| 1.0) - mean(hs, cs, &|_| 1.0);
    let non = mean(ht, ct, &|i| wt[i]) - mean(hs, cs, &|i| ws[i]);
    let over = mean(ht, ct, &|i| 1.0 - wt[i]) - mean(hs, cs, &|i| 1.0 - ws[i]);
    (full, non, over)
}

fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), k), |(i, j)| if labels[i] == j { 1.0 } else { 0.0 })
}

proptest! {
    #[test]
    fn decomposition_matches_brute_force(
        k in 2usize..4,
        ns in 1usize..12,
        nt in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = oddbound::seed::rng(seed);
        let hs: Vec<usize> = (0..ns).map(|_| rng.gen_range(0..k)).collect();
        let cs: Vec<usize> = (0..ns).map(|_| rng.gen_range(0..k)).collect();
        let ht: Vec<usize> = (0..nt).map(|_| rng.gen_range(0..k)).collect();
        let ct: Vec<usize> = (0..nt).map(|_| rng.gen_range(0..k)).collect();
        let ws: Vec<f64> = (0..ns).map(|_| rng.gen()).collect();
        let wt: Vec<f64> = (0..nt).map(|_| rng.gen()).collect();
        // Identity models applied to one-hot rows reproduce the label vectors:
        // h reads the first block of columns, the critic the second.
        let x_s = ndarray::concatenate![ndarray::Axis(1), one_hot(&hs, k), one_hot(&cs, k)];
        let x_t = ndarray::concatenate![ndarray::Axis(1), one_hot(&ht, k), one_hot(&ct, k)];
        let pick = |block: usize| {
            let w = Array2::from_shape_fn((2 * k, k), |(i, j)| if i == block * k + j { 1.0 } else { 0.0 });
            Mlp::from_parameters(vec![w], vec![ndarray::Array1::zeros(k)]).unwrap()
        };
        let (h, c) = (pick(0), pick(1));
        let pair = DatasetPair::new(
            Dataset::unlabeled(x_s, Domain::Source).unwrap(),
            Dataset::unlabeled(x_t, Domain::Target).unwrap(),
        ).unwrap();
        let w = OverlapWeights::new(ws.clone(), wt.clone(), WeightMode::Soft).unwrap();
        let full = dis2_discrepancy(&h, &c, &pair).unwrap();
        let non = odd_discrepancy(&h, &c, &pair, &w).unwrap();
        let over = overlap_discrepancy(&h, &c, &pair, &w).unwrap();
        let (bf, bn, bo) = brute_force(&hs, &cs, &ht, &ct, &ws, &wt);
        prop_assert!((full - bf).abs() <= 1e-12);
        prop_assert!((non - bn).abs() <= 1e-12);
        prop_assert!((over - bo).abs() <= 1e-12);
        prop_assert!((full - (non + over)).abs() <= 1e-12);
        let selected = weighted_discrepancy(&hs, &cs, &ht, &ct, Some(&w)).unwrap();
        prop_assert!((selected - bn).abs() <= 1e-12);
    }

    #[test]
    fn concentration_decreases(ns in 1usize..10_000, nt in 1usize..10_000, delta in 0.001f64..0.9) {
        let c = concentration(ns, nt, delta).unwrap();
        prop_assert!(concentration(ns + 1, nt, delta).unwrap() < c);
        prop_assert!(concentration(ns, nt + 1, delta).unwrap() < c);
        prop_assert!(concentration(ns, nt, delta * 1.05).unwrap() < c);
        let closed = (((ns + 4 * nt) as f64) * (1.0 / delta).ln() / (2.0 * ns as f64 * nt as f64)).sqrt();
        prop_assert!((c - closed).abs() <= 1e-15 * closed.max(1.0));
    }
}
