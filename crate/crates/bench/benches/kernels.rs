use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wpcr_bench::{coarse_steps, cs_fixture};
use wpcr_core::completion::{CompletionConfig, SyntheticInstance};
use wpcr_core::mathkit::SimRng;
use wpcr_core::sensing::cs_recover;
use wpcr_core::throughput::grid_search;
use wpcr_core::wpt::{outage_closed_form, outage_monte_carlo, OutageKind};
use wpcr_core::{FrameSplit, PowerThresholds, ProblemSpec, WptParams};

fn outage(c: &mut Criterion) {
    let p = WptParams::default();
    c.bench_function("outage_closed_form M=32", |b| b.iter(|| outage_closed_form(black_box(0.05), &p).unwrap()));
    let frame = FrameSplit::new(0.25, 0.25, 0.2, 1.0, 1.0).unwrap();
    let thr = PowerThresholds::default();
    let rng = SimRng::new(1, 0);
    c.bench_function("outage_monte_carlo 1e3 trials", |b| {
        b.iter(|| outage_monte_carlo(OutageKind::S, &p, &frame, &thr, 1000, None, &rng).unwrap())
    });
}

fn recovery(c: &mut Criterion) {
    let f = cs_fixture(32, 8, 0.5, 3);
    c.bench_function("cs_recover n=256 kappa=0.5", |b| {
        b.iter(|| cs_recover(black_box(&f.x), &f.op, f.sparsity, f.eps, &f.dft).unwrap())
    });
    let inst = SyntheticInstance::rank_one(128, 16, 8, 0.5, 2).unwrap();
    let cfg = CompletionConfig::default();
    let mut g = c.benchmark_group("completion");
    g.sample_size(10);
    g.bench_function("rank-1 n=128 J=16 J1=8", |b| b.iter(|| inst.solve(&cfg).unwrap()));
    g.finish();
}

fn optimizers(c: &mut Criterion) {
    let spec = ProblemSpec::p0();
    let steps = coarse_steps();
    let mut g = c.benchmark_group("optimizer");
    g.sample_size(10);
    g.bench_function("grid_search P0 coarse", |b| b.iter(|| grid_search(&spec, &steps).unwrap()));
    g.finish();
}

criterion_group!(benches, outage, recovery, optimizers);
criterion_main!(benches);
