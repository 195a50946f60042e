use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array3;
use neva_core::foveation::{blur_stimulus, fixation_vjp};
use neva_core::{init_state, update_state, Fixation, FoveationConfig, Stimulus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn stimulus(side: usize) -> Stimulus {
    let mut rng = ChaCha8Rng::seed_from_u64(side as u64);
    Stimulus::new(Array3::from_shape_fn((side, side, 3), |_| rng.random::<f64>())).unwrap()
}

fn foveation(c: &mut Criterion) {
    let cfg = FoveationConfig::default();
    let xi = Fixation { x: 0.3, y: 0.6 };
    let mut group = c.benchmark_group("foveation");
    for side in [32, 128] {
        let s = stimulus(side);
        let state = init_state(&s, &cfg).unwrap();
        let next = update_state(&state, xi);
        let grad = Array3::from_elem((side, side, 3), 1.0);
        group.bench_with_input(BenchmarkId::new("blur", side), &s, |b, s| {
            b.iter(|| blur_stimulus(black_box(s), cfg.sigma_blur).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("update_state", side), &state, |b, st| {
            b.iter(|| update_state(black_box(st), xi))
        });
        group.bench_with_input(BenchmarkId::new("fixation_vjp", side), &next, |b, n| {
            b.iter(|| fixation_vjp(black_box(n), xi, &grad))
        });
    }
    group.finish();
}

criterion_group!(benches, foveation);
criterion_main!(benches);
