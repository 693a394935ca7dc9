use std::f64::consts::FRAC_PI_3;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lps_bench::fixture;
use lps_core::functional_calculus::{hinf_apply_contour, test_function, Contour, TestFunction};
use lps_core::semigroup_calculus::DEFAULT_DENSITY;
use lps_core::{
    discrete_square, estimate_operator_norm, g_function, heat, make_time_grid, spectral, BanachParams,
};
use num_complex::Complex64;

const SIZES: [usize; 3] = [16, 32, 64];

fn spectral_decomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for n in SIZES {
        let (t, _) = fixture(n, 1, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &t, |b, t| b.iter(|| spectral(black_box(t)).unwrap()));
    }
    group.finish();
}

fn square_functions(c: &mut Criterion) {
    let mut group = c.benchmark_group("square_functions");
    for n in SIZES {
        let (t, f) = fixture(n, 4, 2);
        let sg = heat(&t).unwrap();
        let grid = make_time_grid(&sg, 1, 3.0, 1e-10, DEFAULT_DENSITY).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        group.bench_with_input(BenchmarkId::new("g_function", n), &f, |b, f| {
            b.iter(|| g_function(&sg, black_box(f), zero, 1, 3.0, &grid).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("discrete_square", n), &f, |b, f| {
            b.iter(|| discrete_square(&t, black_box(f), 3.0, 1e-12).unwrap())
        });
    }
    group.finish();
}

fn contour_calculus(c: &mut Criterion) {
    let (t, f) = fixture(32, 2, 3);
    let sg = heat(&t).unwrap();
    let phi = test_function(TestFunction::PhiN { n: 4, q_conj: 2.0 }).unwrap();
    let contour = Contour::stolz_boundary(FRAC_PI_3, 256, 1e-12).unwrap();
    c.bench_function("contour/phi_n_32", |b| b.iter(|| hinf_apply_contour(&sg, &phi, &contour, black_box(&f)).unwrap()));
}

fn norm_estimation(c: &mut Criterion) {
    let (t, _) = fixture(24, 1, 4);
    let params = BanachParams::new(3.0, 2.0, 4).unwrap();
    c.bench_function("operator_norm/24x4", |b| {
        b.iter(|| estimate_operator_norm(black_box(t.matrix()), t.space(), &params, 4, 5).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = spectral_decomposition, square_functions, contour_calculus, norm_estimation
}
criterion_main!(benches);
