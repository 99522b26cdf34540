use caloric_bench::moving_state;
use caloric_core::wave_map;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn wave_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("wave_step");
    for n in [64, 128, 256] {
        let s = moving_state(n);
        let dt = 0.25 * s.grid().h();
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| wave_map::wave_step(black_box(s), dt).unwrap())
        });
    }
    group.finish();
}

fn wave_energy(c: &mut Criterion) {
    let s = moving_state(128);
    c.bench_function("wave_energy/128", |b| b.iter(|| wave_map::wave_energy(black_box(&s))));
}

criterion_group!(benches, wave_step, wave_energy);
criterion_main!(benches);
