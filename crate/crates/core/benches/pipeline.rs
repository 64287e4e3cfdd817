//! Parallel against sequential execution of the hot paths.
//!
//! With the default `parallel` feature each benchmark runs on a one-worker
//! pool and on the global pool. Built with `--no-default-features` it adds a
//! `sequential` entry to the same groups, so one report shows all three:
//!
//! cargo bench -p ghg-core --bench pipeline
//! cargo bench -p ghg-core --bench pipeline --no-default-features

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ghg_core::dataset::Scope;
use ghg_core::gbdt::{fit, Hyperparameters};
use ghg_core::par;
use ghg_core::pipeline::{ModelArtifact, ScopeData};
use ghg_core::shap::{subsample_background, tree_shap_matrix};
use ghg_core::splits::{reduced_grid, select_model, SplitPlan};
use ghg_core::synth::{generate_panel, GeneratorConfig};
use std::hint::black_box;

fn scope_data(companies: usize) -> ScopeData {
    let data = generate_panel(&GeneratorConfig {
        n_companies: companies,
        noise_std: 0.3,
        seed: 3,
        ..Default::default()
    })
    .expect("synthetic panel");
    ScopeData::prepare(&data.panel, Scope::S1, &data.actions, &Default::default(), &Default::default()).expect("targets")
}

/// Worker settings to compare: `0` is the global pool.
fn settings() -> Vec<(String, usize)> {
    if cfg!(feature = "parallel") {
        vec![("1 worker".into(), 1), ("all workers".into(), 0)]
    } else {
        vec![("sequential".into(), 0)]
    }
}

fn hp() -> Hyperparameters {
    Hyperparameters {
        num_leaves: 31,
        min_samples_per_leaf: 5,
        num_rounds: 100,
        ..Default::default()
    }
}

fn bench_fit(c: &mut Criterion) {
    let data = scope_data(600);
    let all: Vec<usize> = (0..data.len()).collect();
    let model = ModelArtifact::fit(&data, &all, &hp(), &Default::default()).expect("fit");
    let matrix = model.encode(&data.rows);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for (name, jobs) in settings() {
        group.bench_with_input(BenchmarkId::new("gbdt", &name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || fit(black_box(&matrix), &data.targets, &hp()).expect("fit")))
        });
    }
    group.finish();
}

fn bench_selection(c: &mut Criterion) {
    let data = scope_data(300);
    let plan = SplitPlan::new(&data.keys, 0.0, 4, 1).expect("plan");
    let grid: Vec<Hyperparameters> = reduced_grid().into_iter().take(4).collect();
    let mut group = c.benchmark_group("select_model");
    group.sample_size(10);
    for (name, jobs) in settings() {
        group.bench_with_input(BenchmarkId::new("4-point grid", &name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || select_model(&data, &plan, &grid, &Default::default()).expect("selection")))
        });
    }
    group.finish();
}

fn bench_shap(c: &mut Criterion) {
    let data = scope_data(400);
    let all: Vec<usize> = (0..data.len()).collect();
    let model = ModelArtifact::fit(&data, &all, &hp(), &Default::default()).expect("fit");
    let matrix = model.encode(&data.rows);
    let rows = matrix.select_rows(&(0..200.min(matrix.n_rows())).collect::<Vec<_>>());
    let background = subsample_background(&matrix, 50, 0);
    let mut group = c.benchmark_group("tree_shap");
    group.sample_size(10);
    for (name, jobs) in settings() {
        group.bench_with_input(BenchmarkId::new("200 rows", &name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || tree_shap_matrix(&model.ensemble, black_box(&rows), &background).expect("shap")))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_selection, bench_shap);
criterion_main!(benches);
