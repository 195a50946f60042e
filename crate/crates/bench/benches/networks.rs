use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array3;
use neva_core::nn::{ConvNetConfig, Network};
use neva_core::{init_state, AttentionConfig, AttentionModel, FoveationConfig, Stimulus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ConvNetConfig {
        conv_channels: vec![8, 16, 16],
        conv_strides: vec![1, 2, 2],
        hidden: vec![32],
        global_pool: true,
    };
    let net = Network::new((3, 32, 32), &cfg.layers((3, 32, 32), 3).unwrap(), &mut rng).unwrap();
    let x = Array3::from_shape_fn((3, 32, 32), |_| rng.random::<f64>());
    c.bench_function("classifier/forward", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    c.bench_function("classifier/forward_backward", |b| {
        b.iter(|| {
            let (out, tape) = net.forward_tape(black_box(&x)).unwrap();
            let mut grads = net.zero_grads();
            net.backward(tape, out, Some(&mut grads))
        })
    });

    let attn = AttentionModel::new(AttentionConfig::default()).unwrap();
    let s = Stimulus::new(Array3::from_shape_fn((32, 32, 3), |_| rng.random::<f64>())).unwrap();
    let state = init_state(&s, &FoveationConfig::default()).unwrap();
    c.bench_function("attention/next_fixation", |b| {
        b.iter(|| attn.next_fixation(black_box(state.perceived())).unwrap())
    });
}

criterion_group!(benches, networks);
criterion_main!(benches);
