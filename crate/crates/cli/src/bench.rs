//! `gcube bench`: adaptive vs fixed-grid sort, build, queries, merge vs
//! rebuild. Every phase is repeated and summarized by median, mean and p99.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use clap::Args;
use gcube_core::merge::union_replacing;
use gcube_core::synth::update_batch;
use gcube_core::view::{apply_update_records, build_view, BuildOptions, View};
use gcube_core::{
    generate, hilbert_sort_with, prediscretize_sort, required_static_resolution, AggregateFn, AggregateRequest,
    Dictionaries, Record, RegionSampler, Schema, SortOptions,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::GeneratorArgs;

#[derive(Args)]
pub(crate) struct BenchArgs {
    /// Benchmark the records of an existing view instead of generated data.
    #[arg(long)]
    view: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    /// Concurrent query readers.
    #[arg(long, default_value_t = 1)]
    readers: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Update batch size as a fraction of the view.
    #[arg(long, default_value_t = 0.02)]
    update_fraction: f64,
    /// Fraction of update records that replace existing keys.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long = "block-size", default_value_t = BuildOptions::default().block_capacity)]
    block_size: u32,
    #[arg(long, default_value_t = BuildOptions::default().fanout)]
    fanout: u32,
}

#[derive(Default)]
struct Row {
    method: &'static str,
    phase: &'static str,
    samples_ms: Vec<f64>,
    nodes_visited: Option<f64>,
    blocks_read: Option<f64>,
    ratio: Option<f64>,
    resolution: Option<u32>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank]
}

impl Row {
    fn median(&self) -> f64 {
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        percentile(&s, 0.5)
    }

    fn write(&self, out: &mut impl Write) -> io::Result<()> {
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let mean = s.iter().sum::<f64>() / s.len().max(1) as f64;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{},{},{},{}",
            self.method,
            self.phase,
            percentile(&s, 0.5),
            mean,
            percentile(&s, 0.99),
            opt(self.nodes_visited),
            opt(self.blocks_read),
            opt(self.ratio),
            self.resolution.map_or(String::new(), |k| k.to_string()),
        )
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn copy_view(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_view(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn sort_rows(records: &[Record], schema: &Schema, repeats: usize) -> Result<Vec<Row>> {
    let adaptive = hilbert_sort_with(records.to_vec(), schema, SortOptions::default())?;
    let ks = required_static_resolution(records, schema)?;
    let fixed = prediscretize_sort(records.to_vec(), schema, ks)?;
    ensure!(
        fixed == adaptive.records,
        "fixed-grid and adaptive sorts disagree on record order"
    );

    let mut a = Row {
        method: "adaptive",
        phase: "sort",
        resolution: Some(adaptive.resolution),
        ..Default::default()
    };
    let mut p = Row {
        method: "prediscretize",
        phase: "sort",
        resolution: Some(ks),
        ..Default::default()
    };
    for _ in 0..repeats {
        let input = records.to_vec();
        let t = Instant::now();
        hilbert_sort_with(input, schema, SortOptions::default())?;
        a.samples_ms.push(ms(t));

        let input = records.to_vec();
        let t = Instant::now();
        let k = required_static_resolution(&input, schema)?;
        prediscretize_sort(input, schema, k)?;
        p.samples_ms.push(ms(t));
    }
    p.ratio = Some(p.median() / a.median());
    Ok(vec![a, p])
}

fn query_row(view: &View, args: &BenchArgs, seed: u64) -> Result<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = RegionSampler::default();
    let schema = view.schema();
    let fns = [
        AggregateFn::Count,
        AggregateFn::Sum,
        AggregateFn::Avg,
        AggregateFn::Min,
        AggregateFn::Max,
    ];
    let measure = schema.measures().first().cloned();
    let work: Vec<_> = (0..args.queries)
        .map(|i| {
            let f = fns[i % fns.len()];
            let request = match (&measure, f) {
                (Some(m), f) if f != AggregateFn::Count => AggregateRequest::of(f, m.clone()),
                _ => AggregateRequest::count(),
            };
            (sampler.sample(schema, &mut rng), request)
        })
        .collect();

    let readers = args.readers.max(1);
    let results: Vec<Result<Vec<(f64, u64, u64)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..readers)
            .map(|r| {
                let work = &work;
                scope.spawn(move || {
                    work.iter()
                        .skip(r)
                        .step_by(readers)
                        .map(|(region, request)| {
                            let t = Instant::now();
                            let res = view.aggregate(region, request)?;
                            Ok((ms(t), res.stats.visited_nodes, res.stats.blocks_read))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("query thread panicked"))
            .collect()
    });
    let mut row = Row {
        method: "index",
        phase: "query",
        resolution: Some(view.meta().resolution),
        ..Default::default()
    };
    let (mut nodes, mut blocks) = (0u64, 0u64);
    for part in results {
        for (t, n, b) in part? {
            row.samples_ms.push(t);
            nodes += n;
            blocks += b;
        }
    }
    let n = row.samples_ms.len().max(1) as f64;
    row.nodes_visited = Some(nodes as f64 / n);
    row.blocks_read = Some(blocks as f64 / n);
    Ok(row)
}

pub(crate) fn run(args: &BenchArgs) -> Result<()> {
    ensure!(args.repeats >= 1, "--repeats must be at least 1");
    let seed = args.generator.seed;
    let (schema, dicts, records) = match &args.view {
        Some(dir) => {
            let view = View::open(dir)?;
            // Stored order is already Hilbert order; shuffle to stand in for arrival order.
            let mut records = view.records()?;
            records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (view.schema().clone(), view.dictionaries().clone(), records)
        }
        None => {
            let ds = generate(&args.generator.config()?)?;
            let dicts = Dictionaries::new(&ds.schema);
            (ds.schema, dicts, ds.records)
        }
    };
    let options = BuildOptions {
        block_capacity: args.block_size,
        fanout: args.fanout,
    };
    let work = tempfile::tempdir().context("creating scratch directory")?;
    let mut rows = sort_rows(&records, &schema, args.repeats)?;

    let base = work.path().join("base");
    let mut build = Row {
        method: "adaptive",
        phase: "build",
        ..Default::default()
    };
    for i in 0..args.repeats {
        let dir = if i + 1 == args.repeats {
            base.clone()
        } else {
            work.path().join(format!("build{i}"))
        };
        let t = Instant::now();
        let report = build_view(&dir, &schema, &dicts, records.clone(), options)?;
        build.samples_ms.push(ms(t));
        build.resolution = Some(report.meta.resolution);
        if dir != base {
            fs::remove_dir_all(&dir)?;
        }
    }
    rows.push(build);

    let view = View::open(&base)?;
    rows.push(query_row(&view, args, seed ^ 0x5eed)?);
    drop(view);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    let size = ((records.len() as f64 * args.update_fraction).round() as usize).max(1);
    let batch = update_batch(&records, &schema, size, args.overlap, &mut rng);
    let mut merge = Row {
        method: "merge",
        phase: "update",
        ..Default::default()
    };
    let mut rebuild = Row {
        method: "rebuild",
        phase: "update",
        ..Default::default()
    };
    for i in 0..args.repeats {
        let dir = work.path().join(format!("merge{i}"));
        copy_view(&base, &dir)?;
        let t = Instant::now();
        let report = apply_update_records(&dir, batch.clone(), &dicts)?;
        merge.samples_ms.push(ms(t));
        merge.resolution = Some(report.meta.resolution);

        let out = work.path().join(format!("rebuild{i}"));
        // From scratch: the union in arrival order, not the view's Hilbert
        // order, which the stable sort would detect as one presorted run.
        let t = Instant::now();
        let union = union_replacing(records.clone(), &batch, &schema)?;
        let report = build_view(&out, &schema, &dicts, union, options)?;
        rebuild.samples_ms.push(ms(t));
        rebuild.resolution = Some(report.meta.resolution);
        fs::remove_dir_all(&dir)?;
        fs::remove_dir_all(&out)?;
    }
    merge.ratio = Some(rebuild.median() / merge.median());
    rows.push(merge);
    rows.push(rebuild);

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "method,phase,median_ms,mean_ms,p99_ms,nodes_visited,blocks_read,ratio,resolution"
    )?;
    for r in &rows {
        r.write(&mut out)?;
    }
    Ok(())
}
