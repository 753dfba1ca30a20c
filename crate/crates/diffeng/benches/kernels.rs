use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffeng::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use diffeng::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let geom = ConvGeom {
        channels: 32,
        height: 32,
        width: 32,
        kh: 3,
        kw: 3,
        stride: 1,
        pad: 1,
    };
    let batch = 4;
    let out_ch = 32;
    let x: Vec<f32> = (0..batch * 32 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f32> = (0..out_ch * geom.patch()).map(|_| rng.random_range(-0.1..0.1)).collect();
    let dout: Vec<f32> = (0..batch * out_ch * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut group = c.benchmark_group("conv2d_3x3_32ch_32px_b4");
    for (label, sequential) in [("sequential", true), ("rayon", false)] {
        group.bench_function(BenchmarkId::new("forward", label), |b| {
            par::set_sequential(sequential);
            b.iter(|| conv2d_forward(&x, batch, &w, out_ch, &geom));
        });
        group.bench_function(BenchmarkId::new("backward", label), |b| {
            par::set_sequential(sequential);
            b.iter(|| conv2d_backward(&x, batch, &w, out_ch, &geom, &dout, true, true));
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, conv);
criterion_main!(benches);
