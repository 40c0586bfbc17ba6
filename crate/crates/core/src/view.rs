//! A view directory: schema, block file, index, dictionaries and metadata.
//!
//! ```text
//! view/
//!   schema.json
//!   data.gcub
//!   index.gidx
//!   dictionaries/<dimension>.json
//!   meta.json
//! ```
//!
//! A new generation is written next to the current one under temporary names
//! and then renamed into place, `meta.json` last. Each file carries the
//! schema digest and the block file's payload fingerprint, so a reader that
//! catches a half-swapped directory gets a stale-index error, never a wrong
//! answer.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::block_store::{write_sorted, BlockFile, DEFAULT_BLOCK_CAPACITY};
use crate::error::{Error, Result};
use crate::hilbert::hilbert_sort;
use crate::index_tree::{build_index, open_index, save_index, IndexTree, LevelSummary, DEFAULT_FANOUT};
use crate::ingest::{ingest_csv, Dictionaries, Rejection};
use crate::merge::{hilbert_merge, UpdateBatch};
use crate::query::{self, AggregateRequest, QueryDocument, QueryRegion, QueryResponse, QueryResult, RangeScan};
use crate::record::Record;
use crate::schema::Schema;

pub const SCHEMA_FILE: &str = "schema.json";
pub const DATA_FILE: &str = "data.gcub";
pub const INDEX_FILE: &str = "index.gidx";
pub const DICTIONARY_DIR: &str = "dictionaries";
pub const META_FILE: &str = "meta.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewMeta {
    pub block_capacity: u32,
    pub fanout: u32,
    pub resolution: u32,
    pub records: u64,
    pub block_count: u64,
    pub height: u32,
    /// Seconds since the Unix epoch.
    pub build_timestamp: u64,
    pub schema_digest: String,
    pub fingerprint: u32,
    /// 0 for a fresh build, incremented by each update.
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub block_capacity: u32,
    pub fanout: u32,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            fanout: DEFAULT_FANOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    /// Sorting (build) or merging (update).
    pub order: Duration,
    pub write: Duration,
    pub index: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub meta: ViewMeta,
    pub rows: u64,
    pub rejects: Vec<Rejection>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub rows: u64,
    pub rejects: Vec<Rejection>,
    /// Update records after dropping in-batch duplicates.
    pub merged: u64,
    pub superseded: u64,
    pub replaced: u64,
    pub inserted: u64,
    pub records_before: u64,
    pub resolution_before: u32,
    pub meta: ViewMeta,
    pub times: PhaseTimes,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Advisory lock held for the duration of a build or update.
struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Lock> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path)(e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to).map_err(Error::io(to))
}

/// Writes sorted records as the next generation of `dir` and swaps it in.
fn write_generation(
    dir: &Path,
    schema: &Schema,
    dicts: &Dictionaries,
    records: &[Record],
    resolution: u32,
    options: BuildOptions,
    generation: u64,
) -> Result<(ViewMeta, Duration, Duration)> {
    let data_tmp = dir.join(format!(".{DATA_FILE}.tmp"));
    let index_tmp = dir.join(format!(".{INDEX_FILE}.tmp"));
    let meta_tmp = dir.join(format!(".{META_FILE}.tmp"));

    let t = Instant::now();
    write_sorted(records, schema, options.block_capacity, resolution, &data_tmp)?;
    let write_time = t.elapsed();

    let t = Instant::now();
    let blocks = BlockFile::open(&data_tmp, schema)?;
    let tree = build_index(&blocks, schema, options.fanout)?;
    save_index(&tree, &index_tmp)?;
    let index_time = t.elapsed();

    let header = blocks.header();
    let meta = ViewMeta {
        block_capacity: options.block_capacity,
        fanout: options.fanout,
        resolution,
        records: header.record_count,
        block_count: header.block_count(),
        height: tree.height(),
        build_timestamp: now_secs(),
        schema_digest: hex(&schema.digest()),
        fingerprint: header.fingerprint,
        generation,
    };
    drop(blocks);
    fs::write(&meta_tmp, serde_json::to_vec_pretty(&meta)?).map_err(Error::io(&meta_tmp))?;

    rename(&data_tmp, &dir.join(DATA_FILE))?;
    rename(&index_tmp, &dir.join(INDEX_FILE))?;
    dicts.save(&dir.join(DICTIONARY_DIR))?;
    rename(&meta_tmp, &dir.join(META_FILE))?;
    Ok((meta, write_time, index_time))
}

/// Sorts `records` and writes a fresh view into `dir`, creating it if needed.
pub fn build_view(
    dir: &Path,
    schema: &Schema,
    dicts: &Dictionaries,
    records: Vec<Record>,
    options: BuildOptions,
) -> Result<BuildReport> {
    if options.block_capacity == 0 || options.fanout < 2 {
        return Err(Error::Precondition(
            "block capacity must be at least 1 and fanout at least 2".into(),
        ));
    }
    let start = Instant::now();
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let _lock = Lock::acquire(dir)?;
    let rows = records.len() as u64;

    let mut times = PhaseTimes::default();
    let t = Instant::now();
    let (sorted, k) = hilbert_sort(records, schema)?;
    times.order = t.elapsed();

    schema.save(&dir.join(SCHEMA_FILE))?;
    let (meta, write, index) = write_generation(dir, schema, dicts, &sorted, k, options, 0)?;
    (times.write, times.index) = (write, index);
    times.total = start.elapsed();
    Ok(BuildReport {
        meta,
        rows,
        rejects: Vec::new(),
        times,
    })
}

/// Loads a CSV file and builds a view from its accepted rows.
pub fn build_view_from_csv(csv: &Path, schema: &Schema, dir: &Path, options: BuildOptions) -> Result<BuildReport> {
    let start = Instant::now();
    let mut dicts = Dictionaries::new(schema);
    let ingested = ingest_csv(csv, schema, &mut dicts)?;
    let mut report = build_view(dir, schema, &dicts, ingested.records, options)?;
    report.rows = ingested.rows;
    report.rejects = ingested.rejects;
    report.times.total = start.elapsed();
    Ok(report)
}

/// An opened, consistency-checked view.
#[derive(Debug)]
pub struct View {
    dir: PathBuf,
    schema: Schema,
    meta: ViewMeta,
    dictionaries: Dictionaries,
    blocks: BlockFile,
    index: IndexTree,
}

impl View {
    pub fn open(dir: &Path) -> Result<View> {
        let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
        let meta_path = dir.join(META_FILE);
        let meta: ViewMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(Error::io(&meta_path))?)?;
        let blocks = BlockFile::open(&dir.join(DATA_FILE), &schema)?;
        let index = open_index(&dir.join(INDEX_FILE), &blocks)?;
        let header = blocks.header();
        if meta.schema_digest != hex(&schema.digest())
            || meta.fingerprint != header.fingerprint
            || meta.records != header.record_count
            || meta.resolution != header.resolution
            || meta.block_capacity != header.block_capacity
        {
            return Err(Error::StaleIndex(format!("{META_FILE} does not describe {DATA_FILE}")));
        }
        let dictionaries = Dictionaries::load(&dir.join(DICTIONARY_DIR), &schema)?;
        Ok(View {
            dir: dir.to_owned(),
            schema,
            meta,
            dictionaries,
            blocks,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn meta(&self) -> &ViewMeta {
        &self.meta
    }

    pub fn dictionaries(&self) -> &Dictionaries {
        &self.dictionaries
    }

    pub fn blocks(&self) -> &BlockFile {
        &self.blocks
    }

    pub fn index(&self) -> &IndexTree {
        &self.index
    }

    pub fn options(&self) -> BuildOptions {
        BuildOptions {
            block_capacity: self.meta.block_capacity,
            fanout: self.meta.fanout,
        }
    }

    pub fn aggregate(&self, region: &QueryRegion, request: &AggregateRequest) -> Result<QueryResult> {
        query::answer(&self.index, &self.blocks, &self.schema, region, request)
    }

    pub fn retrieve(&self, region: &QueryRegion) -> Result<RangeScan<'_>> {
        query::range_retrieve(&self.index, &self.blocks, &self.schema, region)
    }

    pub fn query(&self, doc: &QueryDocument) -> Result<QueryResponse> {
        let labels = |dim: &str, label: &str| self.dictionaries.lookup(dim, label);
        query::execute_document(doc, &self.index, &self.blocks, &self.schema, &labels)
    }

    /// All records in stored order.
    pub fn records(&self) -> Result<Vec<Record>> {
        self.blocks.read_all()
    }

    pub fn level_summaries(&self) -> Vec<LevelSummary> {
        self.index.level_summaries(&self.schema)
    }
}

/// Merges update records into the view at `dir` and swaps in the result.
/// `dicts` replaces the view's dictionaries, so it should extend them.
pub fn apply_update_records(dir: &Path, records: Vec<Record>, dicts: &Dictionaries) -> Result<UpdateReport> {
    let start = Instant::now();
    let _lock = Lock::acquire(dir)?;
    let view = View::open(dir)?;
    let rows = records.len() as u64;
    let batch = UpdateBatch::prepare(records, &view.schema, None)?;

    let mut times = PhaseTimes::default();
    let t = Instant::now();
    let (merged, stats) = hilbert_merge(
        batch.records.iter().cloned().map(Ok),
        view.blocks.scan_all(),
        &view.schema,
        view.meta.resolution,
    )?;
    times.order = t.elapsed();

    let (meta, write, index) = write_generation(
        dir,
        &view.schema,
        dicts,
        &merged,
        stats.resolution_after,
        view.options(),
        view.meta.generation + 1,
    )?;
    (times.write, times.index) = (write, index);
    times.total = start.elapsed();
    Ok(UpdateReport {
        rows,
        rejects: Vec::new(),
        merged: batch.len() as u64,
        superseded: batch.superseded as u64,
        replaced: stats.replaced,
        inserted: batch.len() as u64 - stats.replaced,
        records_before: view.meta.records,
        resolution_before: view.meta.resolution,
        meta,
        times,
    })
}

/// Loads an update CSV against the view's dictionaries and applies it.
pub fn apply_update(dir: &Path, csv: &Path) -> Result<UpdateReport> {
    let start = Instant::now();
    let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
    let mut dicts = Dictionaries::load(&dir.join(DICTIONARY_DIR), &schema)?;
    let ingested = ingest_csv(csv, &schema, &mut dicts)?;
    let mut report = apply_update_records(dir, ingested.records, &dicts)?;
    report.rows = ingested.rows;
    report.rejects = ingested.rejects;
    report.times.total = start.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{AggregateFn, AggregateValue};
    use crate::synth::{generate, Distribution, GeneratorConfig};

    fn small(n: usize, seed: u64) -> (Schema, Vec<Record>) {
        let ds = generate(&GeneratorConfig::synthetic(1, 2, n, Distribution::Uniform, seed)).unwrap();
        (ds.schema, ds.records)
    }

    fn opts() -> BuildOptions {
        BuildOptions {
            block_capacity: 16,
            fanout: 4,
        }
    }

    #[test]
    fn build_then_open() {
        let (s, recs) = small(1000, 1);
        let dir = tempfile::tempdir().unwrap();
        let report = build_view(dir.path(), &s, &Dictionaries::new(&s), recs, opts()).unwrap();
        assert_eq!(report.meta.records, 1000);
        assert_eq!(report.meta.block_count, 63);
        assert!(!dir.path().join(LOCK_FILE).exists());
        let view = View::open(dir.path()).unwrap();
        assert_eq!(view.meta(), &report.meta);
        let r = view
            .aggregate(&QueryRegion::unconstrained(3), &AggregateRequest::count())
            .unwrap();
        assert_eq!(r.value, Some(AggregateValue::Integer(1000)));
    }

    #[test]
    fn update_replaces_and_inserts() {
        let (s, recs) = small(500, 2);
        let dir = tempfile::tempdir().unwrap();
        build_view(dir.path(), &s, &Dictionaries::new(&s), recs.clone(), opts()).unwrap();
        let mut updates: Vec<Record> = recs[..10]
            .iter()
            .map(|r| Record::new(r.coords.clone(), vec![-1.0]))
            .collect();
        updates.extend(small(5, 99).1);
        let report = apply_update_records(dir.path(), updates, &Dictionaries::new(&s)).unwrap();
        assert_eq!((report.replaced, report.inserted), (10, 5));
        assert_eq!(report.meta.records, 505);
        assert_eq!(report.meta.generation, 1);
        assert!(report.meta.resolution >= report.resolution_before);

        let view = View::open(dir.path()).unwrap();
        let min = view
            .aggregate(
                &QueryRegion::unconstrained(3),
                &AggregateRequest::of(AggregateFn::Min, "m0"),
            )
            .unwrap();
        assert_eq!(min.value, Some(AggregateValue::Real(-1.0)));
    }

    #[test]
    fn empty_update_keeps_payload() {
        let (s, recs) = small(300, 3);
        let dir = tempfile::tempdir().unwrap();
        build_view(dir.path(), &s, &Dictionaries::new(&s), recs, opts()).unwrap();
        let before = fs::read(dir.path().join(DATA_FILE)).unwrap();
        let report = apply_update_records(dir.path(), vec![], &Dictionaries::new(&s)).unwrap();
        assert_eq!(report.meta.records, 300);
        assert_eq!(fs::read(dir.path().join(DATA_FILE)).unwrap(), before);
    }

    #[test]
    fn lock_blocks_concurrent_update() {
        let (s, recs) = small(50, 4);
        let dir = tempfile::tempdir().unwrap();
        build_view(dir.path(), &s, &Dictionaries::new(&s), recs, opts()).unwrap();
        let _held = Lock::acquire(dir.path()).unwrap();
        assert!(matches!(
            apply_update_records(dir.path(), vec![], &Dictionaries::new(&s)),
            Err(Error::Locked(_))
        ));
    }

    #[test]
    fn mismatched_files_are_detected() {
        let (s, recs) = small(200, 5);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_view(a.path(), &s, &Dictionaries::new(&s), recs.clone(), opts()).unwrap();
        build_view(b.path(), &s, &Dictionaries::new(&s), recs[..150].to_vec(), opts()).unwrap();
        fs::copy(b.path().join(INDEX_FILE), a.path().join(INDEX_FILE)).unwrap();
        assert!(matches!(View::open(a.path()), Err(Error::StaleIndex(_))));
    }
}
