use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mpode::adjoint::HalfSquaredNorm;
use mpode::harness::oracle::fd_gradient;
use mpode::harness::{run_sweep, run_table, SweepConfig, SweepField, TableConfig};
use mpode::{ExecMode, MlpField, Objective, Scheme, TimeGrid};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn table(c: &mut Criterion) {
    let mut group = c.benchmark_group("table");
    let config = TableConfig::default();
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| run_table(&config, mode).unwrap()));
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep_poly");
    group.sample_size(10);
    let config = SweepConfig {
        field: SweepField::mild_poly(),
        steps: vec![64, 128, 256, 512],
        ..SweepConfig::default()
    };
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| run_sweep(&config, mode).unwrap()));
    }
    group.finish();
}

fn finite_differences(c: &mut Criterion) {
    let mut group = c.benchmark_group("fd_gradient_mlp");
    group.sample_size(10);
    let grid = TimeGrid::equidistant(1.0, 16).unwrap();
    let objective = Objective::terminal_only(HalfSquaredNorm);
    for width in [8, 16] {
        let field = MlpField::new(vec![2, width, width, 2]).unwrap();
        let params = field.init_params(0);
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, params.len()), &params, |b, p| {
                b.iter(|| fd_gradient(Scheme::Rk4, &field, &[0.5, -0.2], &grid, p, &objective, 1e-6, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, table, sweep, finite_differences);
criterion_main!(benches);
