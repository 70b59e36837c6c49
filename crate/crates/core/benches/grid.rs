use std::collections::BTreeMap;
use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use melnikov_core::melnikov::{extended_setup, melnikov_convergent, Base, MelnikovOptions};
use melnikov_core::par;
use melnikov_core::phase::catalog;

fn grid(c: &mut Criterion) {
    let (ext, orbit) = extended_setup(&catalog("forced-pendulum", &BTreeMap::new()).unwrap()).unwrap();
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    let opts = MelnikovOptions::default();
    let ts: Vec<f64> = (0..128).map(|k| 2.0 * PI * k as f64 / 128.0).collect();
    let one = |t0: &f64| melnikov_convergent(&ext, &a, "H0", &orbit, &Base::with_time(&ext, &orbit, 0.0, *t0), &opts).unwrap().value;

    let mut g = c.benchmark_group("melnikov-grid-128");
    g.sample_size(10);
    g.bench_function(if par::is_parallel() { "rayon" } else { "map (sequential build)" }, |b| b.iter(|| par::map(&ts, one)));
    g.bench_function("sequential", |b| b.iter(|| par::map_sequential(&ts, one)));
    g.finish();
}

criterion_group!(benches, grid);
criterion_main!(benches);
