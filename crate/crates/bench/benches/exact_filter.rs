use criterion::{criterion_group, criterion_main, Criterion};
use evitrack_bench::trajectory;
use evitrack_core::exact_filter::{detect_dd_streaming, filter_posterior, GridSpec, QuadratureGrid, TransitionKernel};
use rand::Rng;

fn filter(c: &mut Criterion) {
    let (p, tr) = trajectory(200, 4);
    let grid = QuadratureGrid::from_spec(&GridSpec::default()).unwrap();
    c.bench_function("kernel_build_1201", |b| b.iter(|| TransitionKernel::build(&p, &grid)));
    let kernel = TransitionKernel::build(&p, &grid);
    c.bench_function("filter_posterior_T200", |b| {
        b.iter(|| filter_posterior(&tr.obs, &p, &grid, &kernel).unwrap())
    });
    // Labelling cost per dataset candidate, over varied seeds.
    let mut r = evitrack_core::rng::seeded(0);
    c.bench_function("label_candidate", |b| {
        b.iter(|| {
            let (_, t) = trajectory(200, r.random());
            detect_dd_streaming(&t.obs, t.true_basin, 0.8, 170, &p, &grid, &kernel).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = filter
}
criterion_main!(benches);
