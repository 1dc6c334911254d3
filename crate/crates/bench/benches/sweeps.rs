use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use btc_ipc_bench::{run_sweep, Exec, Sweep, SweepSpec};

fn executors() -> Vec<(&'static str, Exec)> {
    #[allow(unused_mut)]
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    let cases = [
        (
            Sweep::Threshold,
            SweepSpec { n_items: vec![1, 10, 100], max_tx_vbytes: 20_000, ..SweepSpec::default_for(Sweep::Threshold) },
        ),
        (Sweep::Withdraw, SweepSpec::default_for(Sweep::Withdraw)),
        (
            Sweep::Transfer,
            SweepSpec {
                n_items: vec![1, 10, 100, 1000],
                max_tx_vbytes: 20_000,
                ..SweepSpec::default_for(Sweep::Transfer)
            },
        ),
    ];
    for (sweep, spec) in &cases {
        for (name, exec) in executors() {
            group.bench_with_input(BenchmarkId::new(sweep.name(), name), spec, |b, spec| {
                b.iter(|| run_sweep(*sweep, spec, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
