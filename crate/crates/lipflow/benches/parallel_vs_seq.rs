//! Sequential vs rayon-chunked drivers on the hot inner loops: batch
//! discriminator evaluation, velocity-field evaluation, and Sinkhorn.
//!
//! Run with `cargo bench -p lipflow`. Both drivers compute bit-identical
//! results; the bench only measures the scheduling difference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lipflow::exec::Exec;
use lipflow::fdiv::FDivSpec;
use lipflow::metrics::{sinkhorn_w2, SinkhornConfig};
use lipflow::net::{init_network, Activation, AdamConfig, AdamState};
use lipflow::transport::{euler_step, PotentialField};

fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-5.0..5.0))
}

fn bench_forward(c: &mut Criterion) {
    let net = init_network(12, &[32, 32, 32, 1], 1.0, Activation::Relu, 7).unwrap();
    let mut group = c.benchmark_group("forward_batch");
    for &n in &[1024usize, 8192] {
        let x = random_batch(n, 12, 1);
        for exec in [Exec::Seq, Exec::Par] {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), n),
                &x,
                |b, x| b.iter(|| net.forward(x.view(), exec).unwrap()),
            );
        }
    }
    group.finish();
}

fn bench_velocity_field(c: &mut Criterion) {
    let net = init_network(12, &[32, 32, 32, 1], 1.0, Activation::Relu, 7).unwrap();
    let mut group = c.benchmark_group("euler_step");
    for &n in &[1024usize, 8192] {
        let x = random_batch(n, 12, 2);
        for exec in [Exec::Seq, Exec::Par] {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), n),
                &x,
                |b, x| b.iter(|| euler_step(x.view(), &net, 0.1, exec).unwrap()),
            );
        }
    }
    group.finish();
}

fn bench_inner_training(c: &mut Criterion) {
    let spec = FDivSpec::kl();
    let p = random_batch(512, 4, 3);
    let q = random_batch(512, 4, 4) + 2.0;
    let mut group = c.benchmark_group("inner_ascent_x10");
    group.sample_size(20);
    for exec in [Exec::Seq, Exec::Par] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                let mut net =
                    init_network(4, &[32, 32, 32, 1], 1.0, Activation::Relu, 5).unwrap();
                let mut state = AdamState::new(&net, AdamConfig::default());
                lipflow::fdiv::train_discriminator(
                    &mut net,
                    &mut state,
                    &spec,
                    p.view(),
                    q.view(),
                    10,
                    exec,
                )
                .unwrap();
            })
        });
    }
    group.finish();
}

fn bench_sinkhorn(c: &mut Criterion) {
    let a = random_batch(256, 2, 5);
    let b = random_batch(256, 2, 6) + 1.0;
    let cfg = SinkhornConfig::default();
    let mut group = c.benchmark_group("sinkhorn_256");
    group.sample_size(20);
    for exec in [Exec::Seq, Exec::Par] {
        group.bench_function(format!("{exec:?}"), |bch| {
            bch.iter(|| sinkhorn_w2(a.view(), b.view(), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_forward,
    bench_velocity_field,
    bench_inner_training,
    bench_sinkhorn
);
criterion_main!(benches);
