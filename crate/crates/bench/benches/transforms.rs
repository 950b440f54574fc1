use backpar_core::estimator::{build_h_hat, discrete_coefficients};
use backpar_core::observation::{observe, NoiseSpec, TimeMesh};
use backpar_core::spectral::ModalPlan;
use backpar_core::{IndexSet, TensorGrid};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn analysis(c: &mut Criterion) {
    let mut group = c.benchmark_group("analyze");
    for (sizes, cutoff) in [
        (vec![128], 1000.0),
        (vec![64, 64], 400.0),
        (vec![16, 16, 16], 100.0),
    ] {
        let grid = TensorGrid::new(&sizes).unwrap();
        let set = IndexSet::new(sizes.len(), cutoff).unwrap();
        let values: Vec<f64> = (0..grid.len())
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let label = format!("{sizes:?}");
        group.bench_with_input(BenchmarkId::new("separable", &label), &values, |b, v| {
            b.iter(|| discrete_coefficients(black_box(v), &grid, &set).unwrap())
        });
        let plan = ModalPlan::new(grid.clone(), set.members()).unwrap();
        let coeffs = plan.analyze(&values);
        group.bench_with_input(BenchmarkId::new("synthesize", &label), &coeffs, |b, c| {
            b.iter(|| plan.synthesize(black_box(c)))
        });
    }
    group.finish();
}

fn estimator(c: &mut Criterion) {
    let grid = TensorGrid::new(&[32, 32]).unwrap();
    let mesh = TimeMesh::uniform(1.0, 40).unwrap();
    let noise = NoiseSpec::constant(&grid, 0.1, 0.1).unwrap();
    let obs = observe(
        |x| x[0].sin() * x[1].sin(),
        |x, t| t * x[0],
        &grid,
        &mesh,
        &noise,
        1,
    )
    .unwrap();
    c.bench_function("observe 32x32, 41 times", |b| {
        b.iter(|| {
            observe(
                |x| x[0].sin() * x[1].sin(),
                |x, t| t * x[0],
                &grid,
                &mesh,
                &noise,
                black_box(1),
            )
        })
    });
    c.bench_function("h_hat 32x32, beta 32", |b| {
        b.iter(|| build_h_hat(black_box(&obs), 32.0))
    });
}

criterion_group!(benches, analysis, estimator);
criterion_main!(benches);
