use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use taildep::angular::Estimator;
use taildep::inference::{pair_test, AlignedPanel, PairIndex, PermutationConfig};
use taildep::margins::{BalancedSeries, TransformMethod};
use taildep::par;
use taildep::simulate::{sample_balanced, Copula, CopulaSpec, StudyCell, TestKind};

fn study_cell() -> StudyCell {
    StudyCell {
        spec: CopulaSpec { copula: Copula::Gumbel { theta: 2.0 }, phi: 0.7 },
        n: 5000,
        q: 0.99,
        alpha_levels: vec![0.05],
        tests: TestKind::ALL.to_vec(),
        k: 1,
        permutations: 500,
    }
}

fn aligned_panel(assets: usize, n: usize) -> AlignedPanel {
    let spec = CopulaSpec { copula: Copula::StudentT { rho: 0.4, nu: 4.0 }, phi: 0.5 };
    let series: Vec<BalancedSeries> = (0..assets)
        .map(|i| BalancedSeries {
            values: sample_balanced(&spec, n, i as u64).unwrap().0,
            method: TransformMethod::Rank,
            source_asset: format!("a{i}"),
        })
        .collect();
    AlignedPanel::from_lag(&series, 1).unwrap()
}

/// Runs `f` on a one-thread pool so nested parallel maps also run in order.
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn replications(c: &mut Criterion) {
    let cell = study_cell();
    let mut group = c.benchmark_group("study_replications");
    group.sample_size(10);
    for reps in [8usize, 32] {
        group.bench_with_input(BenchmarkId::new("sequential", reps), &reps, |b, &reps| {
            b.iter(|| single_threaded(|| par::map_seq(reps, |r| taildep::simulate::run_replication(&cell, 0, r, black_box(1), false))))
        });
        group.bench_with_input(BenchmarkId::new("parallel", reps), &reps, |b, &reps| {
            b.iter(|| par::map(reps, |r| taildep::simulate::run_replication(&cell, 0, r, black_box(1), false)))
        });
    }
    group.finish();
}

fn eth_pairs(c: &mut Criterion) {
    let panel = aligned_panel(4, 10_000);
    let pairs = PairIndex::enumerate(panel.n_assets());
    let cfg = PermutationConfig { estimator: Estimator::Two, q_plus: 0.99, q_minus: 0.99, permutations: 500, smoothed: false };
    let mut group = c.benchmark_group("eth_pairs");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| single_threaded(|| par::map_seq(pairs.len(), |k| pair_test(&panel, pairs[k], &cfg, black_box(3)).map(|r| r.p_value))))
    });
    group.bench_function("parallel", |b| b.iter(|| par::map(pairs.len(), |k| pair_test(&panel, pairs[k], &cfg, black_box(3)).map(|r| r.p_value))));
    group.finish();
}

criterion_group!(benches, replications, eth_pairs);
criterion_main!(benches);
