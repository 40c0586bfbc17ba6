use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gcube_core::ingest::{write_csv, write_rejects, Rejection};
use gcube_core::synth::{generate, Distribution, GeneratorConfig, DEFAULT_CARDINALITY, DEFAULT_DISTINCT};
use gcube_core::view::{apply_update, build_view_from_csv, BuildOptions, View};
use gcube_core::{QueryDocument, Schema};
use serde_json::json;

mod bench;

#[derive(Parser)]
#[command(name = "gcube", version, about = "Hilbert-ordered data cube views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV plus its schema.
    Gen(GenArgs),
    /// Load a CSV file into a new view directory.
    Build(BuildArgs),
    /// Answer a JSON query against a view.
    Query(QueryArgs),
    /// Merge an update CSV into a view.
    Update(UpdateArgs),
    /// Print view metadata and per-level index statistics.
    Stats(StatsArgs),
    /// Time sorting, queries and updates; prints a CSV table.
    Bench(bench::BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Synthetic,
    HydroLike,
}

#[derive(Clone, Copy, ValueEnum)]
pub(crate) enum DistArg {
    Uniform,
    Clustered,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Uniform => Distribution::Uniform,
            DistArg::Clustered => Distribution::Clustered,
        }
    }
}

/// Generator settings shared by `gen` and `bench`.
#[derive(Args, Clone)]
pub(crate) struct GeneratorArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    preset: Preset,
    /// JSON generator config; overrides the preset and shape flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    distribution: DistArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of categorical dimensions (synthetic preset).
    #[arg(long, default_value_t = 2)]
    categorical: usize,
    /// Number of continuous dimensions (synthetic preset).
    #[arg(long, default_value_t = 2)]
    continuous: usize,
    #[arg(long, default_value_t = DEFAULT_CARDINALITY)]
    cardinality: u32,
    /// Distinct values per continuous dimension (synthetic preset).
    #[arg(long, default_value_t = DEFAULT_DISTINCT)]
    distinct: u32,
}

impl GeneratorArgs {
    pub(crate) fn config(&self) -> Result<GeneratorConfig> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
        }
        let dist = self.distribution.into();
        Ok(match self.preset {
            Preset::HydroLike => GeneratorConfig::hydro_like(self.records, dist, self.seed),
            Preset::Synthetic => GeneratorConfig {
                categorical: vec![self.cardinality; self.categorical],
                continuous: vec![self.distinct; self.continuous],
                ..GeneratorConfig::synthetic(0, 0, self.records, dist, self.seed)
            },
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// CSV output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the schema JSON.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// View directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "block-size", default_value_t = BuildOptions::default().block_capacity)]
    block_size: u32,
    #[arg(long, default_value_t = BuildOptions::default().fanout)]
    fanout: u32,
    /// Rejects report path; defaults to `<csv>.rejects.json` when rows are rejected.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    view: PathBuf,
    /// Query document as JSON text.
    #[arg(long, conflicts_with = "query_file", required_unless_present = "query_file")]
    query: Option<String>,
    #[arg(long)]
    query_file: Option<PathBuf>,
}

#[derive(Args)]
struct UpdateArgs {
    #[arg(long)]
    view: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Rejects report path; defaults to `<csv>.rejects.json` when rows are rejected.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    view: PathBuf,
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn report_rejects(rejects: &[Rejection], explicit: Option<&Path>, csv: &Path) -> Result<Option<PathBuf>> {
    if rejects.is_empty() && explicit.is_none() {
        return Ok(None);
    }
    let path = explicit.map_or_else(|| csv.with_extension("rejects.json"), Path::to_path_buf);
    write_rejects(&path, rejects)?;
    eprintln!("{} row(s) rejected, see {}", rejects.len(), path.display());
    Ok(Some(path))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let ds = generate(&args.generator.config()?)?;
    if let Some(path) = &args.schema_out {
        ds.schema.save(path)?;
    }
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(BufWriter::new(file), &ds.records, &ds.schema, None)?;
            eprintln!("wrote {} records to {}", ds.records.len(), path.display());
        }
        None => write_csv(io::stdout().lock(), &ds.records, &ds.schema, None)?,
    }
    Ok(())
}

fn cmd_build(args: &BuildArgs) -> Result<()> {
    let schema = Schema::load(&args.schema)?;
    let options = BuildOptions {
        block_capacity: args.block_size,
        fanout: args.fanout,
    };
    let report = build_view_from_csv(&args.csv, &schema, &args.out, options)?;
    let rejects = report_rejects(&report.rejects, args.rejects.as_deref(), &args.csv)?;
    let m = &report.meta;
    print_json(&json!({
        "records": m.records,
        "rejected": report.rejects.len(),
        "resolution": m.resolution,
        "blocks": m.block_count,
        "height": m.height,
        "build_ms": report.times.total.as_secs_f64() * 1e3,
        "rejects_report": rejects,
    }))
}

fn cmd_query(args: &QueryArgs) -> Result<()> {
    let text = match (&args.query, &args.query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(p)) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        (None, None) => bail!("pass --query or --query-file"),
    };
    let doc = QueryDocument::from_json(&text).context("parsing query document")?;
    let view = View::open(&args.view)?;
    let response = view.query(&doc)?;
    print_json(&serde_json::to_value(&response)?)
}

fn cmd_update(args: &UpdateArgs) -> Result<()> {
    let report = apply_update(&args.view, &args.csv)?;
    let rejects = report_rejects(&report.rejects, args.rejects.as_deref(), &args.csv)?;
    print_json(&json!({
        "generation": report.meta.generation,
        "rows": report.rows,
        "merged": report.merged,
        "replaced": report.replaced,
        "inserted": report.inserted,
        "superseded": report.superseded,
        "rejected": report.rejects.len(),
        "records_before": report.records_before,
        "records_after": report.meta.records,
        "resolution_before": report.resolution_before,
        "resolution_after": report.meta.resolution,
        "update_ms": report.times.total.as_secs_f64() * 1e3,
        "rejects_report": rejects,
    }))
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let view = View::open(&args.view)?;
    print_json(&json!({
        "meta": view.meta(),
        "levels": view.level_summaries(),
    }))
}

/// The error chain on one line. Library errors already print their source,
/// so causes whose text is already present are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Build(a) => cmd_build(&a),
        Command::Query(a) => cmd_query(&a),
        Command::Update(a) => cmd_update(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Bench(a) => bench::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
