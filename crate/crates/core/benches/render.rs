use criterion::{criterion_group, criterion_main, Criterion};
use diffeng::par;
use splatfix_core::raster::{render, render_backward};
use splatfix_core::synth::{synth_scene, SynthParams};

fn bench_render(c: &mut Criterion) {
    let scene = synth_scene(3, &SynthParams::default()).expect("scene");
    let cam = &scene.train_views[0];
    let target = render(&scene.gaussians, cam, scene.background, false).unwrap().image;
    let mut group = c.benchmark_group("render_64px_4096");
    for (name, sequential) in [("sequential", true), ("parallel", false)] {
        par::set_sequential(sequential);
        group.bench_function(format!("forward/{name}"), |b| {
            b.iter(|| render(&scene.gaussians, cam, scene.background, false).unwrap())
        });
        group.bench_function(format!("forward_backward/{name}"), |b| {
            b.iter(|| {
                let out = render(&scene.gaussians, cam, scene.background, true).unwrap();
                render_backward(&scene.gaussians, cam, &out, &target, 0.2).unwrap()
            })
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, bench_render);
criterion_main!(benches);
