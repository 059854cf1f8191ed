use mcboost::data::error_standard_error;
use mcboost::tree::{fit_classification_tree, fit_regression_tree};
use mcboost::{
    empirical_risk, expected_risk, fit_adaboost_ml, fit_gentleboost, population_minimizer,
    AdaMlConfig, Dataset, FitConfig, GentleConfig, LabelEncoder, Loss, MarginModel, MarginVector,
    ProbabilityVector,
};
use ndarray::Array2;
use proptest::prelude::*;

fn loss_strategy() -> impl Strategy<Value = Loss> {
    prop::sample::select(Loss::ALL.to_vec())
}

/// Interior simplex points with a clear winner.
fn simplex(m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    m.prop_flat_map(|m| prop::collection::vec(0.02f64..1.0, m))
        .prop_map(|w| {
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        })
}

fn near_knot(loss: Loss, t: f64, h: f64) -> bool {
    match loss.knots() {
        Some((a, b)) => (t - a).abs() <= 2.0 * h || (t - b).abs() <= 2.0 * h,
        None => false,
    }
}

fn dataset(rows: &[(f64, f64, usize)], m: usize) -> Dataset {
    let x = Array2::from_shape_fn(
        (rows.len(), 2),
        |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 },
    );
    let names: Vec<String> = (0..m).map(|c| format!("c{c}")).collect();
    Dataset::new(
        x,
        rows.iter().map(|r| r.2).collect(),
        LabelEncoder::from_names(names).unwrap(),
    )
    .unwrap()
}

fn labelled_rows(m: usize) -> impl Strategy<Value = Vec<(f64, f64, usize)>> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0..m), 12..40)
        .prop_filter("every class present", move |rows| {
            (0..m).all(|c| rows.iter().any(|r| r.2 == c))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative_convex_with_matching_derivative(loss in loss_strategy(), t in -10.0f64..10.0, dt in 0.0f64..3.0) {
        prop_assert!(loss.value(t) >= 0.0);
        prop_assert!(loss.deriv(t) <= loss.deriv(t + dt));
        let h = 1e-4;
        if !near_knot(loss, t, h) {
            let fd = (loss.value(t + h) - loss.value(t - h)) / (2.0 * h);
            prop_assert!((fd - loss.deriv(t)).abs() <= 1e-5 * (1.0 + loss.deriv(t).abs()),
                "{loss} at {t}: fd {fd} vs {}", loss.deriv(t));
        }
    }

    #[test]
    fn margin_vectors_are_centred_and_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 2..8), c in -100.0f64..100.0) {
        let f = MarginVector::new(v.clone()).unwrap();
        prop_assert!(f.sum().abs() < 1e-10);
        let shifted = MarginVector::new(v.iter().map(|x| x + c).collect()).unwrap();
        for (a, b) in f.values().iter().zip(shifted.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn minimizer_preserves_probability_order(loss in loss_strategy(), p in simplex(2..=6)) {
        let pv = ProbabilityVector::new(p.clone()).unwrap();
        let f = population_minimizer(loss, &pv, 1e-8).unwrap();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] > p[j] {
                    prop_assert!(f[i] >= f[j] - 1e-9, "{loss}: p {:?} f {:?}", p, f.values());
                }
            }
        }
    }

    #[test]
    fn minimizer_is_a_local_minimum(loss in loss_strategy(), p in simplex(2..=5),
                                    dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 10),
                                    scale in 1e-4f64..1e-1) {
        let pv = ProbabilityVector::new(p.clone()).unwrap();
        let f = population_minimizer(loss, &pv, 1e-8).unwrap();
        let best = expected_risk(loss, &pv, &f).unwrap();
        for d in &dirs {
            let moved: Vec<f64> = f.values().iter().zip(d).map(|(a, b)| a + scale * b).collect();
            let g = MarginVector::new(moved).unwrap();
            prop_assert!(expected_risk(loss, &pv, &g).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn regression_trees_are_deterministic_scale_invariant_and_within_budget(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -2.0f64..2.0, 0.1f64..2.0), 5..40),
        leaves in 1usize..10, k in -8i32..8,
    ) {
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 });
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let w: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * 2f64.powi(k)).collect();
        let cfg = FitConfig::with_max_leaves(leaves);
        let a = fit_regression_tree(x.view(), &y, &w, &cfg).unwrap();
        let b = fit_regression_tree(x.view(), &y, &w, &cfg).unwrap();
        let c = fit_regression_tree(x.view(), &y, &scaled, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        prop_assert!(a.leaf_count() <= leaves);
    }

    #[test]
    fn classification_tree_beats_best_constant(rows in labelled_rows(3), w in prop::collection::vec(0.1f64..3.0, 40), leaves in 1usize..6) {
        let data = dataset(&rows, 3);
        let w = &w[..rows.len()];
        let tree = fit_classification_tree(data.features.view(), &data.labels, 3, w, &FitConfig::with_max_leaves(leaves)).unwrap();
        prop_assert!(tree.leaf_count() <= leaves);
        let mut class_weight = [0.0; 3];
        let mut tree_correct = 0.0;
        for i in 0..rows.len() {
            class_weight[data.labels[i]] += w[i];
            if tree.predict(&data.row(i).to_vec()).unwrap() == data.labels[i] {
                tree_correct += w[i];
            }
        }
        let best_constant = class_weight.iter().cloned().fold(0.0, f64::max);
        prop_assert!(tree_correct >= best_constant - 1e-9);
    }

    #[test]
    fn standard_error_is_symmetric_and_peaks_at_half(err in 0.0f64..1.0, n in 1usize..10_000) {
        let a = error_standard_error(err, n);
        prop_assert!((a - error_standard_error(1.0 - err, n)).abs() < 1e-12);
        prop_assert!(a <= error_standard_error(0.5, n) + 1e-15);
    }

    #[test]
    fn empirical_risk_matches_expected_risk_under_class_frequencies(
        loss in loss_strategy(), v in prop::collection::vec(-3.0f64..3.0, 3),
        labels in prop::collection::vec(0usize..3, 1..30),
    ) {
        let f = MarginVector::new(v).unwrap();
        let margins = vec![f.clone(); labels.len()];
        let mut counts = [0.0; 3];
        labels.iter().for_each(|&y| counts[y] += 1.0);
        let p = ProbabilityVector::from_weights(&counts).unwrap();
        let emp = empirical_risk(loss, &margins, &labels).unwrap();
        let exp = expected_risk(loss, &p, &f).unwrap();
        prop_assert!((emp - exp).abs() <= 1e-12 * (1.0 + exp.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gentleboost_is_equivariant_under_label_permutation(rows in labelled_rows(3), rounds in 1usize..5) {
        let perm = [2usize, 0, 1];
        let data = dataset(&rows, 3);
        let permuted: Vec<(f64, f64, usize)> = rows.iter().map(|&(a, b, y)| (a, b, perm[y])).collect();
        let data_p = dataset(&permuted, 3);
        let cfg = GentleConfig { tree: FitConfig::with_max_leaves(4), ..GentleConfig::default() };
        let model = fit_gentleboost(&data, rounds, &cfg).unwrap();
        let model_p = fit_gentleboost(&data_p, rounds, &cfg).unwrap();
        for i in 0..rows.len() {
            let x = data.row(i).to_vec();
            let (f, g) = (model.margins(&x).unwrap(), model_p.margins(&x).unwrap());
            for j in 0..3 {
                prop_assert!((f[j] - g[perm[j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adaboost_ml_margins_sum_to_zero(rows in labelled_rows(4), rounds in 1usize..15) {
        let data = dataset(&rows, 4);
        let model = fit_adaboost_ml(&data, rounds, &AdaMlConfig::default()).unwrap();
        for i in 0..rows.len() {
            let scores = model.scores(&data.row(i).to_vec()).unwrap();
            let scale: f64 = scores.iter().map(|s| s.abs()).sum::<f64>().max(1.0);
            prop_assert!(scores.iter().sum::<f64>().abs() <= 1e-12 * scale);
        }
        prop_assert!(model.stages().iter().all(|s| s.gamma >= 0.0 && s.gamma <= 10.0));
    }
}
