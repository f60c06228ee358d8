use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fctrace_bench::{gateway_readings, location_table, scenario};
use fctrace_core::positioning::{st_range_query, trilaterate, ProximityParams};
use fctrace_core::sim::{generate_scenario, phone_of, run_scenario, Event};
use fctrace_core::u2u::RawReading;
use fctrace_core::{Facility, FacilityConfig, FacilityMode, TraceRequest};
use std::hint::black_box;

fn positioning(c: &mut Criterion) {
    let (layout, model, readings) = gateway_readings(12.3, 17.8);
    c.bench_function("trilaterate/default_layout", |b| b.iter(|| trilaterate(black_box(&readings), &layout, &model).unwrap()));

    let mut g = c.benchmark_group("st_range_query");
    for n in [1_000usize, 10_000, 100_000] {
        let (table, path) = location_table(n, 50, 7);
        let params = ProximityParams::default();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_function(format!("{n}_fixes"), |b| b.iter(|| st_range_query(&table, black_box(&path), &params)));
    }
    g.finish();
}

fn ingestion(c: &mut Criterion) {
    let (events, _) = generate_scenario(&scenario(60, 3600)).unwrap();
    let logs: Vec<RawReading> = events
        .into_iter()
        .filter_map(|e| match e {
            Event::Sighting { reading, .. } => Some(reading),
            _ => None,
        })
        .collect();
    let mut g = c.benchmark_group("ingest");
    g.sample_size(10);
    g.throughput(Throughput::Elements(logs.len() as u64));
    g.bench_function("device_logs", |b| {
        b.iter_batched(
            || Facility::new(FacilityConfig::new("U", FacilityMode::U2u)).unwrap(),
            |mut f| f.ingest_device_logs(&logs).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn tracing(c: &mut Criterion) {
    let spec = scenario(200, 4 * 3600);
    let (d, _) = run_scenario(&spec).unwrap();
    let mut req = TraceRequest::new(phone_of(0));
    req.as_of = Some(spec.end());
    c.bench_function("run_trace/200_visitors_4h", |b| b.iter(|| d.trace(black_box(&req), "T000000", spec.end()).unwrap()));
}

criterion_group!(benches, positioning, ingestion, tracing);
criterion_main!(benches);
