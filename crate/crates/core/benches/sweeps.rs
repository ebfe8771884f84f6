use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use swingvolt::parallel::{is_parallel, par_map, seq_map};
use swingvolt::scenario::{execute, preset_config, sweep_variants, Scenario};
use swingvolt::stability::analyze;
use swingvolt::topology::{all_to_all_susceptance, TopologySpec};
use swingvolt::{GridModel, NodeParams};

fn scenarios(name: &str) -> Vec<Scenario> {
    sweep_variants(&preset_config(name).unwrap())
        .unwrap()
        .iter()
        .map(|v| Scenario::from_config(&v.config).unwrap())
        .collect()
}

fn bench_sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("preset_sweep");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for name in ["fig5", "fig3"] {
        let runs = scenarios(name);
        group.bench_with_input(BenchmarkId::new("sequential", name), &runs, |b, runs| {
            b.iter(|| seq_map(black_box(runs), |sc| execute(sc).unwrap().means))
        });
        if is_parallel() {
            group.bench_with_input(BenchmarkId::new("rayon", name), &runs, |b, runs| {
                b.iter(|| par_map(black_box(runs), |sc| execute(sc).unwrap().means))
            });
        }
    }
    group.finish();
}

/// Two-machine models on a gain x imbalance grid.
fn stability_grid() -> Vec<GridModel> {
    let b = all_to_all_susceptance(&TopologySpec::all_to_all(2, -0.8, 1.0)).unwrap();
    let mut models = Vec::new();
    for i in 1..=16 {
        for j in 1..=8 {
            let (gamma, p) = (0.25 * i as f64, 0.1 * j as f64);
            let nodes = vec![
                NodeParams::reduced(0.3 + p, 0.2, gamma, 2.0, 1.0, 1.0),
                NodeParams::reduced(-0.3, 0.2, gamma, 2.0, 1.0, 1.0),
            ];
            models.push(GridModel::new(nodes, b.clone(), 50.0).unwrap());
        }
    }
    models
}

fn analyze_one(m: &GridModel) -> bool {
    let theta = m.total_power() / (2.0 * m.nodes[0].secondary_gain);
    analyze(m, &[theta, theta, 1.0, 1.0]).is_ok_and(|r| r.proposition_agrees)
}

fn bench_stability(c: &mut Criterion) {
    let models = stability_grid();
    let mut group = c.benchmark_group("stability_grid");
    group.bench_function("sequential", |b| b.iter(|| seq_map(black_box(&models), analyze_one)));
    if is_parallel() {
        group.bench_function("rayon", |b| b.iter(|| par_map(black_box(&models), analyze_one)));
    }
    group.finish();
}

criterion_group!(benches, bench_sweeps, bench_stability);
criterion_main!(benches);
