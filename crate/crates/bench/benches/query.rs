use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gcube_bench::{hydro, view_of};
use gcube_core::{AggregateFn, AggregateRequest, Distribution, RegionSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn range_queries(c: &mut Criterion) {
    let ds = hydro(100_000, Distribution::Clustered, 11);
    let dir = tempfile::tempdir().unwrap();
    let view = view_of(&ds, dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let regions: Vec<_> = (0..256)
        .map(|_| RegionSampler::default().sample(&ds.schema, &mut rng))
        .collect();
    let measure = ds.schema.measures()[0].clone();

    let mut group = c.benchmark_group("range_query");
    for (name, request) in [
        ("count", AggregateRequest::count()),
        ("sum", AggregateRequest::of(AggregateFn::Sum, measure.clone())),
        ("median", AggregateRequest::of(AggregateFn::Median, measure.clone())),
    ] {
        group.bench_function(name, |b| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % regions.len();
                black_box(view.aggregate(&regions[i], &request))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, range_queries);
criterion_main!(benches);
