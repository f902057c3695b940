use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use satqkd::fitting::{fit_count_rate, synthesize_observations, FreeParams};
use satqkd::geometry::reference_pass;
use satqkd::link::efficiency_series;
use satqkd::postproc::{otp_encrypt, privacy_amplify, BitString, PaSeed};
use satqkd::protocol::{simulate_pass, IntrinsicErrorSeries, Mode, SimOptions};
use satqkd::security::analyze;
use satqkd::SimulationConfig;
use std::hint::black_box;

fn link(c: &mut Criterion) {
    let cfg = SimulationConfig::reference();
    let profile = reference_pass();
    c.bench_function("efficiency_series/reference_pass", |b| {
        b.iter(|| efficiency_series(black_box(&profile), &cfg.receiver, &cfg.source).unwrap())
    });
}

fn simulate(c: &mut Criterion) {
    let cfg = SimulationConfig::reference();
    let profile = reference_pass();
    let err = IntrinsicErrorSeries::constant(cfg.intrinsic_error).unwrap();
    let mut group = c.benchmark_group("simulate_pass");
    for (name, mode, seed) in [
        ("analytic", Mode::Analytic, None),
        ("montecarlo", Mode::MonteCarlo, Some(1)),
    ] {
        let opts = SimOptions {
            mode,
            seed,
            per_pulse: false,
        };
        group.bench_function(name, |b| {
            b.iter(|| simulate_pass(&profile, &cfg.receiver, &cfg.source, &err, black_box(&opts)).unwrap())
        });
    }
    group.finish();
}

fn security(c: &mut Criterion) {
    let cfg = SimulationConfig::reference();
    let err = IntrinsicErrorSeries::constant(cfg.intrinsic_error).unwrap();
    let tally = simulate_pass(
        &reference_pass(),
        &cfg.receiver,
        &cfg.source,
        &err,
        &SimOptions::default(),
    )
    .unwrap()
    .tally;
    c.bench_function("analyze/reference_tally", |b| {
        b.iter(|| analyze(black_box(&tally), &cfg.source, &cfg.security).unwrap())
    });
}

fn fitting(c: &mut Criterion) {
    let cfg = SimulationConfig::reference();
    let profile = reference_pass();
    let obs = synthesize_observations(&profile, &cfg.receiver, &cfg.source, Some(7));
    let mut group = c.benchmark_group("fit_count_rate");
    group.sample_size(20);
    group.bench_function("noisy_reference", |b| {
        b.iter(|| fit_count_rate(black_box(&obs), &profile, &cfg.receiver, &cfg.source, FreeParams::all()).unwrap())
    });
    group.finish();
}

fn postproc(c: &mut Criterion) {
    let mut group = c.benchmark_group("privacy_amplify");
    group.sample_size(20);
    for n in [10_000usize, 100_000] {
        let key = BitString::random(n, 1);
        let seed = PaSeed::random(n, n / 2, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| privacy_amplify(black_box(&key), n / 2, &seed).unwrap())
        });
    }
    group.finish();

    let msg = vec![0x5au8; 64 * 1024];
    let key = BitString::random(8 * msg.len(), 3);
    c.bench_function("otp_encrypt/64KiB", |b| {
        b.iter(|| otp_encrypt(black_box(&msg), &key).unwrap())
    });
}

criterion_group!(benches, link, simulate, security, fitting, postproc);
criterion_main!(benches);
