//! Sequential against rayon-backed scheduling of the DFC subproblems.
//!
//! Without the `parallel` feature both arms run on the calling thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfc_core::simgen::gen_mc_instance;
use dfc_core::{run_dfc, DfcConfig, SeededRng, Task, Variant};

fn bench_dfc(c: &mut Criterion) {
    let inst = gen_mc_instance(300, 300, 5, 22_500, 0.1, &mut SeededRng::new(1, 0)).unwrap();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut group = c.benchmark_group("dfc_proj_300x300_t6");
    group.sample_size(10);
    for workers in [1, cores.max(4)] {
        let mut cfg = DfcConfig::new(Variant::Proj, Task::Mc);
        cfg.solver_cfg = cfg.solver_cfg.with_noise_std(0.1);
        cfg.t = 6;
        cfg.workers = workers;
        let solver = cfg.base_solver();
        group.bench_with_input(BenchmarkId::new("workers", workers), &cfg, |b, cfg| {
            b.iter(|| black_box(run_dfc(&inst.obs, cfg, solver.as_ref()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_dfc);
criterion_main!(benches);
