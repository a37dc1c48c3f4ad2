//! Rayon vs single-thread Monte Carlo rollouts.
//!
//! Both paths produce bit-identical reports (per-rollout ChaCha streams),
//! so this measures pure scheduling overhead vs speedup. Run with
//! `cargo bench -p safectl-core`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use safectl_core::noise::{GaussianModel, NoiseModel};
use safectl_core::polyhedra::PolyhedralSet;
use safectl_core::sim_verify::{
    monte_carlo_invariance, monte_carlo_invariance_serial, InitialStateRule,
};
use safectl_core::synth_model::LinearSystem;

fn reference_plant() -> LinearSystem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.2, 0.0, -0.1, 0.0, //
            0.0, -0.2, 0.5, 0.1, //
            -0.1, -0.5, 1.0, 0.0, //
            0.1, 0.4, -0.6, 0.1,
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        3,
        &[
            1.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, //
            1.0, 0.0, 1.0, //
            1.0, 1.0, 2.0,
        ],
    );
    LinearSystem::new(a, b).unwrap()
}

fn bench_monte_carlo(c: &mut Criterion) {
    let sys = reference_plant();
    // a stabilizing rank-one gain in the style of the data-driven solution
    let k = DMatrix::from_row_slice(
        3,
        4,
        &[
            0.0, 0.4157, -0.5, -0.1, //
            0.0, 0.2494, -0.3, -0.06, //
            0.0, 0.1663, -0.2, -0.04,
        ],
    );
    let s = PolyhedralSet::from_rows(
        &[
            vec![0.0, 10.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, -1.0],
        ],
        &[1.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0],
    )
    .unwrap();
    let noise = NoiseModel::Gaussian(GaussianModel::isotropic(4, 0.01).unwrap());
    let rule = InitialStateRule::Fixed(DVector::from_vec(vec![1.0, 0.1, 1.0, 1.0]));

    let mut group = c.benchmark_group("monte_carlo_invariance");
    for rollouts in [1_000usize, 10_000] {
        group.bench_with_input(
            BenchmarkId::new("parallel", rollouts),
            &rollouts,
            |bench, &m| {
                bench.iter(|| {
                    monte_carlo_invariance(&sys, &k, &s, &noise, &rule, m, 50, 42).unwrap()
                })
            },
        );
        group.bench_with_input(
            BenchmarkId::new("serial", rollouts),
            &rollouts,
            |bench, &m| {
                bench.iter(|| {
                    monte_carlo_invariance_serial(&sys, &k, &s, &noise, &rule, m, 50, 42).unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_monte_carlo);
criterion_main!(benches);
