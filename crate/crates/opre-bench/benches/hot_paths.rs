use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opre_bench::{configuration, contact_instance, environment, power_family, temporal_stretches, SEED};
use opre_core::percolation::temporal_survival_depth;
use opre_core::{reach, run_contact, sample_opre, survival_depth, ConnectionFamily, Ground};
use std::hint::black_box;

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_opre");
    for &side in &[64u32, 256, 1024] {
        let env = environment(side as usize + 1);
        let fam_v = ConnectionFamily::constant(0.95);
        let fam_e = power_family(3.0);
        g.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, &s| {
            b.iter(|| sample_opre(Ground::Plain(&env), &fam_v, &fam_e, s, s, black_box(SEED)).unwrap())
        });
    }
    g.finish();
}

fn sweeps(c: &mut Criterion) {
    let mut g = c.benchmark_group("reach");
    for &side in &[256u32, 1024] {
        let cfg = configuration(side, side);
        let sources: Vec<(u32, u32)> = (0..=side).step_by(2).map(|c| (0, c)).collect();
        g.bench_with_input(BenchmarkId::new("all_sources", side), &cfg, |b, cfg| {
            b.iter(|| reach(cfg, black_box(&sources), side))
        });
        g.bench_with_input(BenchmarkId::new("survival_depth", side), &cfg, |b, cfg| {
            b.iter(|| survival_depth(cfg, black_box((0, (side / 2) & !1))))
        });
    }
    g.finish();
}

fn contact(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_contact");
    g.sample_size(20);
    for &(n, horizon) in &[(16usize, 50.0), (64, 200.0)] {
        let inst = contact_instance(n, horizon);
        g.bench_with_input(BenchmarkId::from_parameter(format!("n{n}_h{horizon}")), &inst, |b, inst| {
            b.iter(|| run_contact(black_box(inst)))
        });
    }
    g.finish();
}

fn temporal(c: &mut Criterion) {
    let mut g = c.benchmark_group("temporal_survival_depth");
    for &depth in &[1000u32, 10000] {
        let nus = temporal_stretches(depth as usize);
        g.bench_with_input(BenchmarkId::from_parameter(depth), &nus, |b, nus| {
            b.iter(|| temporal_survival_depth(0.7, nus, depth, 2 * depth, black_box(SEED)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sampling, sweeps, contact, temporal);
criterion_main!(benches);
