use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roca_core::inference::select_threshold;
use roca_core::metrics::{pa_scores, pak_scores, pw_scores, rpa_scores, Metric};

fn stream(t: usize, seed: u64) -> (Vec<u8>, Vec<u8>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = vec![0u8; t];
    let mut i = 0;
    while i < t {
        if rng.gen_bool(0.01) {
            let len = rng.gen_range(1..20).min(t - i);
            truth[i..i + len].fill(1);
            i += len + 1;
        } else {
            i += 1;
        }
    }
    let pred = (0..t).map(|_| rng.gen_bool(0.05) as u8).collect();
    let scores = (0..t).map(|_| rng.gen::<f64>()).collect();
    (truth, pred, scores)
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metric");
    for t in [1_000usize, 100_000] {
        let (truth, pred, _) = stream(t, 1);
        g.bench_with_input(BenchmarkId::new("pw", t), &t, |b, _| b.iter(|| pw_scores(black_box(&truth), black_box(&pred))));
        g.bench_with_input(BenchmarkId::new("pa", t), &t, |b, _| b.iter(|| pa_scores(black_box(&truth), black_box(&pred))));
        g.bench_with_input(BenchmarkId::new("pak20", t), &t, |b, _| {
            b.iter(|| pak_scores(black_box(&truth), black_box(&pred), 20.0))
        });
        g.bench_with_input(BenchmarkId::new("rpa", t), &t, |b, _| b.iter(|| rpa_scores(black_box(&truth), black_box(&pred))));
    }
    g.finish();

    let (truth, _, scores) = stream(10_000, 2);
    c.bench_function("threshold_search_rpa_10k", |b| {
        b.iter(|| select_threshold(black_box(&scores), Some(&truth), Metric::Rpa).unwrap())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
