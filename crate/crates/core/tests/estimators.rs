use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taildep::angular::*;

/// Naive first estimator: sort the radii, take the lower-rank quantile,
/// average over the exceedances.
fn oracle_one(x: &[f64], y: &[f64], q: f64) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(&a, &b)| (a.max(0.0), b)).collect();
    let mut radii: Vec<f64> = pts.iter().map(|(a, b)| a.hypot(*b)).collect();
    radii.sort_by(f64::total_cmp);
    let r0 = radii[((q * (radii.len() - 1) as f64) + 1e-9).floor() as usize];
    let hits: Vec<f64> = pts
        .iter()
        .filter(|(a, b)| {
            let r = a.hypot(*b);
            r >= r0 && r > 0.0
        })
        .map(|(a, b)| a * b / (a * a + b * b))
        .collect();
    3.0 * hits.iter().sum::<f64>() / hits.len() as f64
}

fn oracle_edm(x: &[f64], y: &[f64], q: f64) -> f64 {
    let mut radii: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.hypot(*b)).collect();
    radii.sort_by(f64::total_cmp);
    let r0 = radii[((q * (radii.len() - 1) as f64) + 1e-9).floor() as usize];
    let (mut s, mut n) = (0.0, 0);
    for (a, b) in x.iter().zip(y) {
        let r = a.hypot(*b);
        if r >= r0 && r > 0.0 {
            s += a * b / (a * a + b * b);
            n += 1;
        }
    }
    s / n as f64
}

fn heavy_sample(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random_range(1e-9..1.0);
        let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        s * u.powf(-0.5)
    };
    let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
    let y = x.iter().map(|&a| 0.5 * a + draw(&mut rng)).collect();
    (x, y)
}

fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-1e6f64..1e6, n), prop::collection::vec(-1e6f64..1e6, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sign_flip_of_target_negates_both_estimators((x, y) in finite_vec(5..300), q in 0.5f64..0.99, qm in 0.5f64..0.99) {
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        if let (Ok(a), Ok(b)) = (dtd_estimator_one(&x, &y, q), dtd_estimator_one(&x, &neg, q)) {
            prop_assert!((a.lambda_hat + b.lambda_hat).abs() <= 1e-14);
        }
        if let (Ok(a), Ok(b)) = (dtd_estimator_two(&x, &y, q, q), dtd_estimator_two(&x, &neg, q, q)) {
            prop_assert!((a.lambda_hat + b.lambda_hat).abs() <= 1e-14);
        }
        // with distinct levels the flip also swaps which side each level applies to
        if let (Ok(a), Ok(b)) = (dtd_estimator_two(&x, &y, q, qm), dtd_estimator_two(&x, &neg, qm, q)) {
            prop_assert!((a.lambda_hat + b.lambda_hat).abs() <= 1e-14);
        }
    }

    #[test]
    fn estimates_stay_in_range((x, y) in finite_vec(5..300), q in 0.0f64..0.999) {
        if let Ok(e) = dtd_estimator_one(&x, &y, q) {
            prop_assert!((-1.5..=1.5).contains(&e.lambda_hat));
        }
        if let Ok(e) = dtd_estimator_two(&x, &y, q, q) {
            prop_assert!((-1.0..=1.0).contains(&e.lambda_hat));
            prop_assert!((0.0..=0.5).contains(&e.sigma_pp.unwrap()));
            prop_assert!((0.0..=0.5).contains(&e.sigma_pm.unwrap()));
        }
        let (xp, _) = split_tails(&x);
        let ya: Vec<f64> = y.iter().map(|v| v.abs()).collect();
        if let Ok(e) = edm_at_quantile(&xp, &ya, q) {
            prop_assert!((0.0..=0.5).contains(&e.sigma));
        }
    }

    #[test]
    fn estimators_match_naive_oracles(seed in any::<u64>(), n in 50usize..2000, q in 0.8f64..0.99) {
        let (x, y) = heavy_sample(seed, n);
        let one = dtd_estimator_one(&x, &y, q).unwrap().lambda_hat;
        prop_assert!((one - oracle_one(&x, &y, q)).abs() < 1e-12);
        let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let yp: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        let ym: Vec<f64> = y.iter().map(|v| (-v).max(0.0)).collect();
        let two = dtd_estimator_two(&x, &y, q, q).unwrap().lambda_hat;
        let expected = 2.0 * (oracle_edm(&xp, &yp, q) - oracle_edm(&xp, &ym, q));
        prop_assert!((two - expected).abs() < 1e-12);
    }

    #[test]
    fn common_rescaling_leaves_estimates_unchanged(seed in any::<u64>(), k in -20i32..20, c in 0.01f64..100.0) {
        let (x, y) = heavy_sample(seed, 500);
        let base1 = dtd_estimator_one(&x, &y, 0.95).unwrap().lambda_hat;
        let base2 = dtd_estimator_two(&x, &y, 0.95, 0.95).unwrap().lambda_hat;
        // powers of two scale exactly
        let p = 2f64.powi(k);
        let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).map(|(a, b)| (a * p, b * p)).unzip();
        prop_assert_eq!(dtd_estimator_one(&xs, &ys, 0.95).unwrap().lambda_hat, base1);
        prop_assert_eq!(dtd_estimator_two(&xs, &ys, 0.95, 0.95).unwrap().lambda_hat, base2);
        let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).map(|(a, b)| (a * c, b * c)).unzip();
        prop_assert!((dtd_estimator_one(&xs, &ys, 0.95).unwrap().lambda_hat - base1).abs() < 1e-12);
        prop_assert!((dtd_estimator_two(&xs, &ys, 0.95, 0.95).unwrap().lambda_hat - base2).abs() < 1e-12);
    }

    #[test]
    fn oracle_identity_and_ball_constraint(seed in any::<u64>(), per in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DiscreteAngularMeasure::random_balanced(&mut rng, per).unwrap();
        let (pp, pm) = (sigma_oracle(&m, Quadrant::PlusPlus), sigma_oracle(&m, Quadrant::PlusMinus));
        prop_assert!((lambda_oracle(&m) - 2.0 * (pp - pm)).abs() <= 1e-12);
        let b = ball_coordinates_default(pp, pm).unwrap();
        prop_assert!(b.satisfies_constraint(1e-9));
        let [c, s, cn, sn] = m.balance_sums();
        prop_assert!((c - cn).abs() < 1e-12 && (s - sn).abs() < 1e-12);
    }
}

/// The defining integral of omega_x omega_y over the right half circle, summed atom by atom.
fn brute_lambda(m: &DiscreteAngularMeasure) -> f64 {
    m.atoms().iter().filter(|a| a.theta.cos() > 1e-15).map(|a| a.mass * a.theta.cos() * a.theta.sin()).sum()
}

#[test]
fn oracle_lambda_matches_direct_atom_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let m = DiscreteAngularMeasure::random_balanced(&mut rng, 3).unwrap();
        let got = lambda_oracle(&m);
        let want = brute_lambda(&m);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn estimators_approach_the_oracle_as_n_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = DiscreteAngularMeasure::random_balanced(&mut rng, 3).unwrap();
    let truth = lambda_oracle(&m);
    let mean_err = |n: usize| {
        let mut e = [0.0; 2];
        for seed in 0..6 {
            let (x, y) = sample_from_measure(&m, n, seed);
            e[0] += (dtd_estimator_one(&x, &y, 0.99).unwrap().lambda_hat - truth).abs() / 6.0;
            e[1] += (dtd_estimator_two(&x, &y, 0.99, 0.99).unwrap().lambda_hat - truth).abs() / 6.0;
        }
        e
    };
    let small = mean_err(10_000);
    let large = mean_err(300_000);
    assert!(large[0] < small[0] && large[1] < small[1], "{small:?} -> {large:?}");
    assert!(large[0] < 0.05 && large[1] < 0.05, "{large:?}");
}
