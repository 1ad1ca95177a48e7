use ndarray::{Array2, Axis};
use proptest::prelude::*;

use cbdl::classifier::{hinge_loss, ova_train, smo, svm_train_binary, Kernel, DEFAULT_TOL};

/// Two overlapping Gaussian-ish blobs built from a value pool.
fn blobs(values: &[f64], n: usize) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        let centre = if i % 2 == 0 { 0.6 } else { -0.6 };
        centre + values[(i * 2 + j) % values.len()]
    });
    let y = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dual_is_feasible_with_small_gap(
        values in prop::collection::vec(-1.0f64..1.0, 40),
        n in 6usize..20,
        c in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let (x, y) = blobs(&values, n);
        let k = x.dot(&x.t());
        let sol = smo(k.view(), &y, c, DEFAULT_TOL, 100_000).unwrap();
        prop_assert!(sol.diagnostics.converged);
        let a = &sol.alpha;
        prop_assert!(a.iter().all(|&v| (-1e-12..=c + 1e-12).contains(&v)));
        let balance: f64 = a.iter().zip(&y).map(|(ai, yi)| ai * yi).sum();
        prop_assert!(balance.abs() < 1e-9);

        // The default stopping rule bounds the gap only by about C·n·tol, so
        // the gap itself is checked on a tighter solve.
        let sol = smo(k.view(), &y, c, 1e-5, 100_000).unwrap();
        let a = &sol.alpha;

        let ay: Vec<f64> = a.iter().zip(&y).map(|(ai, yi)| ai * yi).collect();
        let w = x.t().dot(&ndarray::Array1::from(ay.clone()));
        let quad = w.dot(&w);
        let dual = a.sum() - 0.5 * quad;
        // Primal value of w with its best bias; the optimum over b sits at a
        // hinge breakpoint.
        let scores: Vec<f64> = x.rows().into_iter().map(|row| row.dot(&w)).collect();
        let hinge_at = |b: f64| -> f64 {
            scores.iter().zip(&y).map(|(s, yi)| (1.0 - yi * (s + b)).max(0.0)).sum()
        };
        let hinge = scores
            .iter()
            .zip(&y)
            .map(|(s, yi)| hinge_at(yi - s))
            .fold(hinge_at(sol.bias), f64::min);
        let primal = 0.5 * quad + c * hinge;
        prop_assert!(primal - dual <= 1e-3 * (1.0 + primal.abs()), "primal {} dual {}", primal, dual);
    }

    #[test]
    fn linear_training_ignores_sample_order(
        values in prop::collection::vec(-1.0f64..1.0, 60),
        shift in 1usize..29,
    ) {
        let n = 30;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| (if j == i % 3 { 1.5 } else { 0.0 }) + 0.5 * values[(i * 3 + j) % 60]);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let order: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        let xp = x.select(Axis(0), &order);
        let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = ova_train(x.view(), &labels, 3, 1.0, Kernel::Linear, DEFAULT_TOL).unwrap();
        let b = ova_train(xp.view(), &lp, 3, 1.0, Kernel::Linear, DEFAULT_TOL).unwrap();
        let probe = Array2::from_shape_fn((25, 3), |(i, j)| values[(i * 5 + j * 11) % 60] * 2.0);
        prop_assert_eq!(a.predict_batch(probe.view()).unwrap(), b.predict_batch(probe.view()).unwrap());
    }
}

#[test]
fn hinge_loss_does_not_grow_with_c() {
    let values: Vec<f64> = (0..50).map(|i| ((i * 37 % 50) as f64 / 25.0 - 1.0) * 0.9).collect();
    let (x, y) = blobs(&values, 40);
    let losses: Vec<f64> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&c| {
            let m = svm_train_binary(x.view(), &y, c, Kernel::Linear, DEFAULT_TOL).unwrap();
            hinge_loss(&m, x.view(), &y)
        })
        .collect();
    assert!(losses[1] <= losses[0] + 1e-6 && losses[2] <= losses[1] + 1e-6, "{losses:?}");
}

#[test]
fn argmax_is_invariant_to_common_positive_scaling() {
    let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = Array2::from_shape_fn((24, 2), |(i, j)| (i % 3) as f64 * if j == 0 { 1.0 } else { -0.5 } + 0.3 * values[i]);
    let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
    let mut model = ova_train(x.view(), &labels, 3, 1.0, Kernel::POLY2, DEFAULT_TOL).unwrap();
    let before = model.predict_batch(x.view()).unwrap();
    for m in &mut model.machines {
        m.dual_coefs.mapv_inplace(|v| v * 3.5);
        m.bias *= 3.5;
    }
    assert_eq!(model.predict_batch(x.view()).unwrap(), before);
}
