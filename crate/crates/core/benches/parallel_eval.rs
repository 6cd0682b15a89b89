use std::hint::black_box;

use cascade_core::evolution::{optimize_sensor, AngleMode, DeConfig, FreeParameterSpec};
use cascade_core::lattice::{staggered_schedule, SensorConfig, SidePolicy};
use cascade_core::metrology::fisher_matrix_dense;
use cascade_core::parallel::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn sensor(n: usize, m: usize) -> SensorConfig {
    let pulses =
        staggered_schedule(n, m, SidePolicy::Bidirectional, 3e4, 1.0, &[0.3], &[1.1]).unwrap();
    SensorConfig::uniform(n, 0.6, 7, pulses).with_sensing_phases(vec![0.2; n])
}

fn de_generations(c: &mut Criterion) {
    let mut group = c.benchmark_group("de_sensor_search");
    group.sample_size(10);
    let free = FreeParameterSpec {
        reference_phases: false,
        chis: AngleMode::Tied,
        ..FreeParameterSpec::default()
    };
    for n in [2usize, 3] {
        let base = sensor(n, n);
        for (name, exec) in MODES {
            let de = DeConfig {
                max_generations: 5,
                population_size: Some(40),
                seed: 7,
                execution: exec,
                ..DeConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &base, |b, base| {
                b.iter(|| optimize_sensor(black_box(base), &free, &de, &[]).unwrap())
            });
        }
    }
    group.finish();
}

fn dense_fisher(c: &mut Criterion) {
    let mut group = c.benchmark_group("dense_fisher");
    group.sample_size(10);
    for n in [2usize, 3] {
        let config = sensor(n, n);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &config, |b, config| {
                b.iter(|| fisher_matrix_dense(black_box(config), 1e-5, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, de_generations, dense_fisher);
criterion_main!(benches);
