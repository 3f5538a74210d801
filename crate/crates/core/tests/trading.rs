use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taildep::backtest::*;
use taildep::margins::*;
use taildep::timeseries::{ReturnPanel, Timestamp};

fn panel(assets: usize, rows: usize, seed: u64) -> ReturnPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = (0..assets)
        .map(|_| (0..rows).map(|_| symmetric_pareto_quantile(rng.random_range(1e-9..1.0)) * 0.01).collect())
        .collect();
    ReturnPanel::from_columns((0..assets).map(|i| format!("a{i}")).collect(), (0..rows as i64).map(Timestamp::Index).collect(), columns)
        .unwrap()
}

fn signals(seed: u64, assets: usize, count: usize) -> Vec<Signal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Signal {
            explanatory: rng.random_range(0..assets),
            negated: rng.random_bool(0.5),
            target: rng.random_range(0..assets),
            lambda_hat: rng.random_range(-1.0..1.0),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregate_is_the_sum_of_pairs(seed in any::<u64>(), count in 0usize..6, lag in 1usize..3) {
        let train = panel(3, 400, seed);
        let test = panel(3, 200, seed ^ 7);
        let cfg = StrategyConfig { entry_upper_q: 0.9, entry_lower_q: 0.1, lag, cost: 0.0 };
        let r = run_backtest(&test, &signals(seed, 3, count), &entry_thresholds(&train, &cfg).unwrap(), &cfg).unwrap();
        for t in 0..test.n_rows() {
            let sum: f64 = r.pair_pnl.iter().map(|p| p[t]).sum();
            prop_assert!((r.aggregate[t] - sum).abs() <= 1e-12);
        }
        prop_assert_eq!(r.aggregate.len(), 200);
        prop_assert_eq!(r.aggregate.first().copied(), Some(0.0));
    }

    #[test]
    fn costs_subtract_trade_for_trade(seed in any::<u64>(), cost in 0.0f64..0.01) {
        let train = panel(3, 400, seed);
        let test = panel(3, 300, seed ^ 3);
        let free = StrategyConfig { entry_upper_q: 0.95, entry_lower_q: 0.05, lag: 1, cost: 0.0 };
        let paid = StrategyConfig { cost, ..free };
        let th = entry_thresholds(&train, &free).unwrap();
        let sig = signals(seed, 3, 4);
        let a = run_backtest(&test, &sig, &th, &free).unwrap();
        let b = run_backtest(&test, &sig, &th, &paid).unwrap();
        prop_assert_eq!(&a.trades, &b.trades);
        for (k, s) in sig.iter().enumerate() {
            let id = s.pair_id(test.assets());
            let mut charged = 0.0;
            for t in 0..test.n_rows() {
                // trades booked at row t were signalled at row t - 1
                if t > 0 {
                    let ts = test.timestamps()[t - 1].to_string();
                    let n = a.trades.iter().filter(|tr| tr.timestamp == ts && format!("{}{}->{}", tr.explanatory, if tr.sign < 0 { "-" } else { "+" }, tr.target) == id).count();
                    // duplicate signals share an id, so count their share
                    let dup = sig.iter().filter(|o| o.pair_id(test.assets()) == id).count();
                    charged += cost * n as f64 / dup as f64;
                }
                prop_assert!((a.pair_pnl[k][t] - charged - b.pair_pnl[k][t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn future_rows_never_change_past_decisions(seed in any::<u64>(), cut in 10usize..190) {
        let train = panel(3, 400, seed);
        let test = panel(3, 200, seed ^ 5);
        let cfg = StrategyConfig::default();
        let th = entry_thresholds(&train, &StrategyConfig { entry_upper_q: 0.9, entry_lower_q: 0.1, ..cfg }).unwrap();
        let sig = signals(seed, 3, 3);
        let base = run_backtest(&test, &sig, &th, &cfg).unwrap();
        // scramble every row after `cut`
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
        let cols: Vec<Vec<f64>> = test
            .columns()
            .iter()
            .map(|c| c.iter().enumerate().map(|(t, &v)| if t > cut { rng.random_range(-1.0..1.0) } else { v }).collect())
            .collect();
        let scrambled = ReturnPanel::from_columns(test.assets().to_vec(), test.timestamps().to_vec(), cols).unwrap();
        let other = run_backtest(&scrambled, &sig, &th, &cfg).unwrap();
        let early = |r: &BacktestResult| r.trades.iter().filter(|t| t.timestamp.parse::<usize>().unwrap() < cut).cloned().collect::<Vec<_>>();
        prop_assert_eq!(early(&base), early(&other));
        for p in 0..sig.len() {
            prop_assert_eq!(&base.pair_pnl[p][..=cut], &other.pair_pnl[p][..=cut]);
        }
    }
}

#[test]
fn backtest_is_deterministic() {
    let train = panel(4, 500, 1);
    let test = panel(4, 300, 2);
    let cfg = StrategyConfig { entry_upper_q: 0.95, entry_lower_q: 0.05, lag: 2, cost: 0.001 };
    let th = entry_thresholds(&train, &cfg).unwrap();
    let sig = signals(3, 4, 5);
    assert_eq!(run_backtest(&test, &sig, &th, &cfg).unwrap(), run_backtest(&test, &sig, &th, &cfg).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tail_index_transform_keeps_sign_and_order(seed in any::<u64>()) {
        let p = panel(1, 3000, seed);
        let x = p.column(0);
        let fit = fit_tails(x, 0.02).unwrap();
        let z = transform_tail_index(x, &fit).unwrap();
        for (a, b) in x.iter().zip(&z) {
            prop_assert_eq!(a.signum() * (*a != 0.0) as i32 as f64, b.signum() * (*b != 0.0) as i32 as f64);
        }
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        for w in idx.windows(2) {
            if x[w[0]] < x[w[1]] {
                prop_assert!(z[w[0]] < z[w[1]]);
            }
        }
    }

    #[test]
    fn rank_transform_sees_only_ranks(seed in any::<u64>()) {
        let p = panel(1, 500, seed);
        let x = p.column(0);
        let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let a = transform_rank(x).unwrap();
        let b = transform_rank(&e).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn standardised_tails_have_unit_scale() {
    // Student-like heavy tails with unequal sides
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..200_000)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            if rng.random_bool(0.5) {
                3.0 * u.powf(-1.0 / 3.0)
            } else {
                -0.5 * u.powf(-1.0 / 1.5)
            }
        })
        .collect();
    let q = 0.01;
    let (tail, _) = standardize(&x, TransformMethod::TailIndex, q, "a").unwrap();
    let (rank, _) = standardize(&x, TransformMethod::Rank, q, "a").unwrap();
    for p in [q, q / 2.0, q / 5.0] {
        let up = taildep::quantile::quantile(&tail.values, 1.0 - p);
        let down = -taildep::quantile::quantile(&tail.values, p);
        assert!((up * up * p - 1.0).abs() < 0.1, "tail-index upper at {p}: {}", up * up * p);
        assert!((down * down * p - 1.0).abs() < 0.1, "tail-index lower at {p}: {}", down * down * p);
        // symmetric Pareto quantiles sit sqrt2 below the pure power law
        let up = taildep::quantile::quantile(&rank.values, 1.0 - p);
        assert!((up * up * p - 1.0).abs() < 3.0 * p.sqrt() + 0.02, "rank at {p}: {}", up * up * p);
    }
}
