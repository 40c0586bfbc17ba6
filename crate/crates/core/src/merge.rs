//! Merging a sorted update batch into a sorted view in one pass.
//!
//! Both inputs are streams already in Hilbert order. The merge walks them
//! together with one adaptive comparator: a record whose key matches a target
//! record replaces it, otherwise the smaller record is emitted first. When a
//! comparison forces a deeper resolution, records emitted earlier keep their
//! place because deeper ranks refine coarser ones.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::PathBuf;
use std::time::SystemTime;

use crate::error::{Error, Result};
use crate::grid::GridKey;
use crate::hilbert::{hilbert_sort_with, CompareStats, HilbertComparator, RankCache, SortOptions};
use crate::record::Record;
use crate::schema::Schema;

/// Update records sorted into Hilbert order, with at most one record per key.
#[derive(Debug, Clone)]
pub struct UpdateBatch {
    pub records: Vec<Record>,
    /// Resolution reached while sorting the batch.
    pub resolution: u32,
    pub source: Option<PathBuf>,
    pub created: SystemTime,
    /// Input rows dropped because a later row had the same key.
    pub superseded: usize,
}

impl UpdateBatch {
    /// Validates and sorts `records`. Among rows with the same key the last
    /// one in input order wins.
    pub fn prepare(records: Vec<Record>, schema: &Schema, source: Option<PathBuf>) -> Result<Self> {
        let sorted = hilbert_sort_with(records, schema, SortOptions::default())?;
        let input = sorted.records.len();
        let mut records: Vec<Record> = Vec::with_capacity(input);
        let mut last_key: Option<GridKey> = None;
        for r in sorted.records {
            let key = GridKey::of(&r, schema)?;
            // The sort is stable, so a later duplicate follows an earlier one.
            if last_key.as_ref() == Some(&key) {
                *records.last_mut().expect("a previous record exists") = r;
            } else {
                records.push(r);
                last_key = Some(key);
            }
        }
        Ok(UpdateBatch {
            superseded: input - records.len(),
            records,
            resolution: sorted.resolution,
            source,
            created: SystemTime::now(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub target_read: u64,
    pub updates_read: u64,
    pub written: u64,
    /// Target records replaced by an update with the same key.
    pub replaced: u64,
    pub resolution_before: u32,
    pub resolution_after: u32,
    pub compare: CompareStats,
}

/// One input stream with its current head and the previous head, used to
/// check that the stream really is in order.
struct Stream<I> {
    name: &'static str,
    iter: I,
    position: u64,
    head: Option<(Record, RankCache)>,
    previous: Option<RankCache>,
}

impl<I: Iterator<Item = Result<Record>>> Stream<I> {
    fn new(name: &'static str, iter: I) -> Self {
        Stream {
            name,
            iter,
            position: 0,
            head: None,
            previous: None,
        }
    }

    /// Moves to the next record, checking it does not precede the last one.
    fn advance(&mut self, cmp: &mut HilbertComparator<'_>, schema: &Schema) -> Result<()> {
        if let Some((_, c)) = self.head.take() {
            self.previous = Some(c);
        }
        let Some(next) = self.iter.next() else {
            return Ok(());
        };
        let mut r = next?;
        r.validate(schema)?;
        let mut cache = cmp.cache_for(&mut r)?;
        if let Some(prev) = self.previous.as_mut() {
            if cmp.order(prev, &mut cache) == Ordering::Greater {
                return Err(Error::StreamOrderViolation {
                    stream: self.name,
                    position: self.position,
                });
            }
        }
        self.position += 1;
        self.head = Some((r, cache));
        Ok(())
    }

    /// Emits the rest of the stream.
    fn flush(
        &mut self,
        cmp: &mut HilbertComparator<'_>,
        schema: &Schema,
        sink: &mut impl FnMut(Record) -> Result<()>,
    ) -> Result<u64> {
        let mut n = 0;
        while self.head.is_some() {
            sink(self.take())?;
            n += 1;
            self.advance(cmp, schema)?;
        }
        Ok(n)
    }

    fn take(&mut self) -> Record {
        let (mut r, c) = self.head.take().expect("stream has a head");
        self.previous = Some(c.clone());
        r.cached_rank = Some(c);
        r
    }
}

/// Merges `updates` into `target`, passing each output record to `sink` in
/// order. Both streams are read once, front to back.
///
/// The comparator starts at `resolution`, the resolution the target was
/// sorted at, and the returned stats carry the resolution the output is
/// sorted at. Order checks on each input stream go through the same
/// comparator, so consecutive records of either stream also separate there.
pub fn hilbert_merge_into<U, T, F>(
    updates: U,
    target: T,
    schema: &Schema,
    resolution: u32,
    mut sink: F,
) -> Result<MergeStats>
where
    U: IntoIterator<Item = Result<Record>>,
    T: IntoIterator<Item = Result<Record>>,
    F: FnMut(Record) -> Result<()>,
{
    let mut cmp = HilbertComparator::new(schema, resolution)?;
    let mut u = Stream::new("update", updates.into_iter());
    let mut t = Stream::new("target", target.into_iter());
    let mut stats = MergeStats {
        resolution_before: resolution,
        ..Default::default()
    };
    u.advance(&mut cmp, schema)?;
    t.advance(&mut cmp, schema)?;

    while let (Some((_, cu)), Some((_, ct))) = (u.head.as_mut(), t.head.as_mut()) {
        match cmp.order(cu, ct) {
            Ordering::Equal => {
                sink(u.take())?;
                stats.replaced += 1;
                t.previous = t.head.take().map(|(_, c)| c);
                t.advance(&mut cmp, schema)?;
                u.advance(&mut cmp, schema)?;
            }
            Ordering::Less => {
                sink(u.take())?;
                u.advance(&mut cmp, schema)?;
            }
            Ordering::Greater => {
                sink(t.take())?;
                t.advance(&mut cmp, schema)?;
            }
        }
        stats.written += 1;
    }
    stats.written += u.flush(&mut cmp, schema, &mut sink)?;
    stats.written += t.flush(&mut cmp, schema, &mut sink)?;

    stats.updates_read = u.position;
    stats.target_read = t.position;
    stats.resolution_after = cmp.resolution();
    stats.compare = cmp.stats();
    Ok(stats)
}

/// [`hilbert_merge_into`] collecting the output.
pub fn hilbert_merge<U, T>(updates: U, target: T, schema: &Schema, resolution: u32) -> Result<(Vec<Record>, MergeStats)>
where
    U: IntoIterator<Item = Result<Record>>,
    T: IntoIterator<Item = Result<Record>>,
{
    let mut out = Vec::new();
    let stats = hilbert_merge_into(updates, target, schema, resolution, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok((out, stats))
}

/// The key-wise union of `target` and `updates`, update records replacing
/// target records with the same key, in no particular order. This is the
/// input a full rebuild sorts from scratch.
pub fn union_replacing(target: Vec<Record>, updates: &[Record], schema: &Schema) -> Result<Vec<Record>> {
    let mut pending: HashMap<GridKey, &Record> = HashMap::with_capacity(updates.len());
    for u in updates {
        pending.insert(GridKey::of(u, schema)?, u);
    }
    let mut out = Vec::with_capacity(target.len() + updates.len());
    for t in target {
        match pending.remove(&GridKey::of(&t, schema)?) {
            Some(u) => out.push(u.clone()),
            None => out.push(t),
        }
    }
    for u in updates {
        if let Some(last) = pending.remove(&GridKey::of(u, schema)?) {
            out.push(last.clone());
        }
    }
    Ok(out)
}
