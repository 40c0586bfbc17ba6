//! Leaf layer: Hilbert-ordered records in fixed-capacity blocks.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GCUB"
//!      4     2  format version (1)
//!      6     2  flags (0)
//!      8    32  schema digest (SHA-256)
//!     40     8  record count N
//!     48     4  block capacity B
//!     52     4  resolution k_f the records are ordered at
//!     56     4  dimension count d
//!     60     4  measure count m
//!     64     4  payload fingerprint (CRC-32 over the block checksums in order)
//!     68     4  CRC-32 of bytes 0..68
//!     72        ceil(N / B) blocks
//! ```
//!
//! A block is its records followed by a CRC-32 of the record bytes. A record
//! is its coordinates (`u32` per categorical dimension, `f64` per continuous
//! one) followed by its measures (`f64` each). Every block but the last holds
//! exactly B records, so block offsets are computed, not stored. Ranks are
//! not stored; the records are resolution independent on disk.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::GridKey;
use crate::hilbert::RankCache;
use crate::record::Record;
use crate::schema::Schema;

pub const BLOCK_MAGIC: [u8; 4] = *b"GCUB";
pub const BLOCK_FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 72;
pub const DEFAULT_BLOCK_CAPACITY: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFileHeader {
    pub schema_digest: [u8; 32],
    pub record_count: u64,
    pub block_capacity: u32,
    pub resolution: u32,
    pub dims: u32,
    pub measures: u32,
    pub fingerprint: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockStats {
    pub records: u64,
    pub block_capacity: u32,
    pub blocks: u64,
    pub resolution: u32,
}

impl BlockFileHeader {
    pub fn block_count(&self) -> u64 {
        self.record_count.div_ceil(u64::from(self.block_capacity))
    }

    pub fn stats(&self) -> BlockStats {
        BlockStats {
            records: self.record_count,
            block_capacity: self.block_capacity,
            blocks: self.block_count(),
            resolution: self.resolution,
        }
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&BLOCK_MAGIC);
        b[4..6].copy_from_slice(&BLOCK_FORMAT_VERSION.to_le_bytes());
        b[8..40].copy_from_slice(&self.schema_digest);
        b[40..48].copy_from_slice(&self.record_count.to_le_bytes());
        b[48..52].copy_from_slice(&self.block_capacity.to_le_bytes());
        b[52..56].copy_from_slice(&self.resolution.to_le_bytes());
        b[56..60].copy_from_slice(&self.dims.to_le_bytes());
        b[60..64].copy_from_slice(&self.measures.to_le_bytes());
        b[64..68].copy_from_slice(&self.fingerprint.to_le_bytes());
        let crc = crc32fast::hash(&b[..68]);
        b[68..72].copy_from_slice(&crc.to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if b[0..4] != BLOCK_MAGIC {
            return Err(Error::BadMagic { expected: "GCUB" });
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != BLOCK_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "block file",
                found: version,
            });
        }
        let crc = u32::from_le_bytes(b[68..72].try_into().unwrap());
        if crc != crc32fast::hash(&b[..68]) {
            return Err(Error::Corrupt {
                what: "block file header",
                detail: "checksum mismatch".into(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let header = BlockFileHeader {
            schema_digest: b[8..40].try_into().unwrap(),
            record_count: u64::from_le_bytes(b[40..48].try_into().unwrap()),
            block_capacity: u32_at(48),
            resolution: u32_at(52),
            dims: u32_at(56),
            measures: u32_at(60),
            fingerprint: u32_at(64),
        };
        if header.block_capacity == 0 {
            return Err(Error::Corrupt {
                what: "block file header",
                detail: "block capacity 0".into(),
            });
        }
        Ok(header)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut f = File::open(path).map_err(Error::io(path))?;
        let mut buf = [0u8; HEADER_LEN as usize];
        f.read_exact(&mut buf).map_err(Error::io(path))?;
        Self::decode(&buf)
    }
}

/// Header fields of the block file at `path`.
pub fn block_stats(path: &Path) -> Result<BlockStats> {
    Ok(BlockFileHeader::read_from(path)?.stats())
}

/// Fixed-width record codec for one schema.
#[derive(Debug, Clone)]
pub(crate) struct RecordCodec {
    categorical: Vec<bool>,
    measures: usize,
    size: usize,
}

impl RecordCodec {
    pub(crate) fn new(schema: &Schema) -> Self {
        let categorical: Vec<bool> = schema.dimensions().iter().map(|d| d.is_categorical()).collect();
        let size = categorical.iter().map(|&c| if c { 4 } else { 8 }).sum::<usize>() + 8 * schema.measure_count();
        RecordCodec {
            categorical,
            measures: schema.measure_count(),
            size,
        }
    }

    pub(crate) fn size(&self) -> usize {
        self.size
    }

    fn encode(&self, r: &Record, out: &mut Vec<u8>) {
        for (&cat, &v) in self.categorical.iter().zip(&r.coords) {
            if cat {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for m in &r.measures {
            out.extend_from_slice(&m.to_le_bytes());
        }
    }

    fn decode(&self, b: &[u8]) -> Record {
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &b[pos..pos + n];
            pos += n;
            s
        };
        let coords = self
            .categorical
            .iter()
            .map(|&cat| {
                if cat {
                    f64::from(u32::from_le_bytes(take(4).try_into().unwrap()))
                } else {
                    f64::from_le_bytes(take(8).try_into().unwrap())
                }
            })
            .collect();
        let measures = (0..self.measures)
            .map(|_| f64::from_le_bytes(take(8).try_into().unwrap()))
            .collect();
        Record::new(coords, measures)
    }
}

/// Checks that `records` are in Hilbert order at resolution `k` and that `k`
/// separates every pair of distinct keys: ranks strictly increase except
/// across runs of equal keys.
pub fn check_sorted(records: &[Record], schema: &Schema, k: u32) -> Result<()> {
    let mut prev: Option<Cow<'_, RankCache>> = None;
    let mut scratch = 0u64;
    for (i, r) in records.iter().enumerate() {
        r.validate(schema)?;
        let key = GridKey::of(r, schema)?;
        let mut cache = match &r.cached_rank {
            Some(c) if c.key() == &key => Cow::Borrowed(c),
            _ => Cow::Owned(RankCache::new(key)),
        };
        if let Some(p) = &mut prev {
            if p.key() != cache.key() && !digits_less(p, &mut cache, k, &mut scratch) {
                return Err(Error::SortOrderViolation { index: i as u64 });
            }
        }
        prev = Some(cache);
    }
    Ok(())
}

/// Whether `a` ranks strictly before `b` at resolution `k`. Digits are
/// computed only up to the first difference; borrowed caches are copied only
/// when they lack a needed digit.
fn digits_less(a: &mut Cow<'_, RankCache>, b: &mut Cow<'_, RankCache>, k: u32, scratch: &mut u64) -> bool {
    fn digit(c: &mut Cow<'_, RankCache>, level: u32, scratch: &mut u64) -> u32 {
        match c.rank().digits().get(level as usize) {
            Some(&d) => d,
            None => c.to_mut().digit(level, scratch),
        }
    }
    for level in 0..k {
        let (da, db) = (digit(a, level, scratch), digit(b, level, scratch));
        if da != db {
            return da < db;
        }
    }
    false
}

fn encode_blocks<'a>(
    records: &'a [Record],
    codec: &'a RecordCodec,
    capacity: usize,
) -> impl Iterator<Item = Vec<u8>> + 'a {
    records.chunks(capacity).map(move |chunk| {
        let mut buf = Vec::with_capacity(chunk.len() * codec.size() + 4);
        for r in chunk {
            codec.encode(r, &mut buf);
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    })
}

fn fingerprint_of(records: &[Record], codec: &RecordCodec, capacity: usize) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for block in encode_blocks(records, codec, capacity) {
        h.update(&block[block.len() - 4..]);
    }
    h.finalize()
}

/// Writes Hilbert-ordered records to `writer` in one sequential pass.
pub fn write_sorted_to<W: Write>(
    mut writer: W,
    records: &[Record],
    schema: &Schema,
    block_capacity: u32,
    resolution: u32,
) -> Result<BlockFileHeader> {
    if block_capacity == 0 {
        return Err(Error::Precondition("block capacity must be at least 1".into()));
    }
    check_sorted(records, schema, resolution)?;
    let codec = RecordCodec::new(schema);
    let capacity = block_capacity as usize;
    let header = BlockFileHeader {
        schema_digest: schema.digest(),
        record_count: records.len() as u64,
        block_capacity,
        resolution,
        dims: schema.dims() as u32,
        measures: schema.measure_count() as u32,
        fingerprint: fingerprint_of(records, &codec, capacity),
    };
    let io = |e| Error::Io {
        path: PathBuf::from("<writer>"),
        source: e,
    };
    writer.write_all(&header.encode()).map_err(io)?;
    for block in encode_blocks(records, &codec, capacity) {
        writer.write_all(&block).map_err(io)?;
    }
    writer.flush().map_err(io)?;
    Ok(header)
}

/// Writes Hilbert-ordered records to a new block file at `path`.
pub fn write_sorted(
    records: &[Record],
    schema: &Schema,
    block_capacity: u32,
    resolution: u32,
    path: &Path,
) -> Result<BlockFileHeader> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let header = write_sorted_to(&mut w, records, schema, block_capacity, resolution).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_owned(),
            source,
        },
        e => e,
    });
    let header = match header {
        Ok(h) => h,
        Err(e) => {
            drop(w);
            let _ = fs::remove_file(path);
            return Err(e);
        }
    };
    let file = w.into_inner().map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e.into_error(),
    })?;
    file.sync_all().map_err(Error::io(path))?;
    Ok(header)
}

/// An open block file. Blocks are read with positioned reads, so one handle
/// can serve concurrent readers of disjoint ranges.
#[derive(Debug)]
pub struct BlockFile {
    path: PathBuf,
    file: File,
    header: BlockFileHeader,
    codec: RecordCodec,
}

impl BlockFile {
    pub fn open(path: &Path, schema: &Schema) -> Result<Self> {
        let header = BlockFileHeader::read_from(path)?;
        if header.schema_digest != schema.digest() {
            return Err(Error::Schema(format!(
                "{} was written for a different schema",
                path.display()
            )));
        }
        if header.dims as usize != schema.dims() || header.measures as usize != schema.measure_count() {
            return Err(Error::Corrupt {
                what: "block file header",
                detail: "dimension or measure count disagrees with schema".into(),
            });
        }
        let file = File::open(path).map_err(Error::io(path))?;
        let codec = RecordCodec::new(schema);
        let bf = BlockFile {
            path: path.to_owned(),
            file,
            header,
            codec,
        };
        let len = bf.file.metadata().map_err(Error::io(path))?.len();
        let expected = bf.block_offset(bf.header.block_count());
        if len != expected {
            return Err(Error::Corrupt {
                what: "block file",
                detail: format!("length {len}, header implies {expected}"),
            });
        }
        Ok(bf)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &BlockFileHeader {
        &self.header
    }

    pub fn stats(&self) -> BlockStats {
        self.header.stats()
    }

    pub fn block_count(&self) -> u64 {
        self.header.block_count()
    }

    pub fn len(&self) -> u64 {
        self.header.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.header.record_count == 0
    }

    fn stride(&self) -> u64 {
        u64::from(self.header.block_capacity) * self.codec.size() as u64 + 4
    }

    fn block_offset(&self, block: u64) -> u64 {
        // only the last block can be short, and nothing follows it
        let full = self.header.record_count / u64::from(self.header.block_capacity);
        if block <= full {
            HEADER_LEN + block * self.stride()
        } else {
            let tail = self.header.record_count % u64::from(self.header.block_capacity);
            HEADER_LEN + full * self.stride() + tail * self.codec.size() as u64 + 4
        }
    }

    /// Number of records in `block`.
    pub fn block_len(&self, block: u64) -> usize {
        let cap = u64::from(self.header.block_capacity);
        (self.header.record_count - block * cap).min(cap) as usize
    }

    pub fn read_block(&self, block: u64) -> Result<Vec<Record>> {
        if block >= self.block_count() {
            return Err(Error::BlockRange {
                from: block,
                to: block + 1,
                count: self.block_count(),
            });
        }
        let n = self.block_len(block);
        let mut buf = vec![0u8; n * self.codec.size() + 4];
        read_exact_at(&self.file, &mut buf, self.block_offset(block)).map_err(Error::io(&self.path))?;
        let (body, crc) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::CorruptBlock { block });
        }
        Ok(body
            .chunks_exact(self.codec.size())
            .map(|c| self.codec.decode(c))
            .collect())
    }

    /// Records of blocks `from..to` in stored order.
    pub fn scan(&self, from: u64, to: u64) -> Result<BlockScan<'_>> {
        if from > to || to > self.block_count() {
            return Err(Error::BlockRange {
                from,
                to,
                count: self.block_count(),
            });
        }
        Ok(BlockScan {
            file: self,
            next_block: from,
            end_block: to,
            current: Vec::new().into_iter(),
        })
    }

    /// Every record in stored order.
    pub fn scan_all(&self) -> BlockScan<'_> {
        self.scan(0, self.block_count())
            .expect("full range is always in bounds")
    }

    pub fn read_all(&self) -> Result<Vec<Record>> {
        self.scan_all().collect()
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

/// Forward-only record stream over a block range.
#[derive(Debug)]
pub struct BlockScan<'a> {
    file: &'a BlockFile,
    next_block: u64,
    end_block: u64,
    current: std::vec::IntoIter<Record>,
}

impl Iterator for BlockScan<'_> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.current.next() {
                return Some(Ok(r));
            }
            if self.next_block >= self.end_block {
                return None;
            }
            match self.file.read_block(self.next_block) {
                Ok(records) => {
                    self.next_block += 1;
                    self.current = records.into_iter();
                }
                Err(e) => {
                    self.next_block = self.end_block;
                    return Some(Err(e));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::hilbert_sort;
    use crate::schema::DimensionSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> Schema {
        Schema::new(
            vec![
                DimensionSpec::categorical("c", 10),
                DimensionSpec::continuous("x", -1.0, 1.0),
            ],
            vec!["m".into(), "n".into()],
        )
        .unwrap()
    }

    fn sorted_records(n: usize, seed: u64) -> (Vec<Record>, u32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                Record::new(
                    vec![f64::from(rng.random_range(0..10u32)), rng.random_range(-1.0..=1.0)],
                    vec![rng.random(), rng.random_range(-5.0..5.0)],
                )
            })
            .collect();
        hilbert_sort(recs, &schema()).unwrap()
    }

    #[test]
    fn ten_records_make_three_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.gcub");
        let (recs, k) = sorted_records(10, 1);
        write_sorted(&recs, &schema(), 4, k, &path).unwrap();
        let bf = BlockFile::open(&path, &schema()).unwrap();
        assert_eq!(
            bf.stats(),
            BlockStats {
                records: 10,
                block_capacity: 4,
                blocks: 3,
                resolution: k
            }
        );
        let sizes: Vec<usize> = (0..3).map(|b| bf.read_block(b).unwrap().len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(block_stats(&path).unwrap(), bf.stats());
        assert_eq!(bf.scan(1, 3).unwrap().count(), 6);
        assert_eq!(bf.scan(2, 2).unwrap().count(), 0);
        assert!(bf.scan(2, 4).is_err());
        assert!(bf.scan(2, 1).is_err());
    }

    #[test]
    fn empty_view_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.gcub");
        write_sorted(&[], &schema(), 8, 4, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), HEADER_LEN);
        assert_eq!(
            block_stats(&path).unwrap(),
            BlockStats {
                records: 0,
                block_capacity: 8,
                blocks: 0,
                resolution: 4
            }
        );
        assert!(BlockFile::open(&path, &schema())
            .unwrap()
            .read_all()
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unsorted_input_names_offending_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.gcub");
        let (mut recs, k) = sorted_records(20, 2);
        recs.swap(6, 13);
        match write_sorted(&recs, &schema(), 4, k, &path) {
            Err(Error::SortOrderViolation { index }) => assert!(index == 7 || index == 6 || index == 13 || index == 14),
            other => panic!("expected order violation, got {other:?}"),
        }
        assert!(!path.exists());
    }

    #[test]
    fn insufficient_resolution_is_an_order_violation() {
        let s = Schema::new(vec![DimensionSpec::continuous("x", 0.0, 1.0)], vec![]).unwrap();
        let recs = vec![Record::new(vec![0.30], vec![]), Record::new(vec![0.40], vec![])];
        assert!(matches!(
            write_sorted_to(Vec::new(), &recs, &s, 4, 2),
            Err(Error::SortOrderViolation { index: 1 })
        ));
        assert!(write_sorted_to(Vec::new(), &recs, &s, 4, 3).is_ok());
    }

    #[test]
    fn tampered_magic_and_payload_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.gcub");
        let (recs, k) = sorted_records(50, 3);
        write_sorted(&recs, &schema(), 8, k, &path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[HEADER_LEN as usize + 30] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let bf = BlockFile::open(&path, &schema()).unwrap();
        assert!(matches!(bf.read_block(0), Err(Error::CorruptBlock { block: 0 })));
        assert!(bf.read_block(1).is_ok());

        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(block_stats(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.gcub");
        let (recs, k) = sorted_records(5, 4);
        write_sorted(&recs, &schema(), 8, k, &path).unwrap();
        let other = Schema::new(
            vec![
                DimensionSpec::categorical("c", 11),
                DimensionSpec::continuous("x", -1.0, 1.0),
            ],
            vec!["m".into(), "n".into()],
        )
        .unwrap();
        assert!(BlockFile::open(&path, &other).is_err());
    }

    /// Write shim that records every write position: one append-only pass.
    #[derive(Default)]
    struct Recorder {
        bytes: Vec<u8>,
        writes: Vec<(usize, usize)>,
    }

    impl Write for Recorder {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.writes.push((self.bytes.len(), buf.len()));
            self.bytes.extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn writes_are_one_forward_pass() {
        let (recs, k) = sorted_records(100, 5);
        let mut rec = Recorder::default();
        write_sorted_to(&mut rec, &recs, &schema(), 16, k).unwrap();
        let mut expected_pos = 0;
        for &(pos, len) in &rec.writes {
            assert_eq!(pos, expected_pos);
            expected_pos += len;
        }
        let codec = RecordCodec::new(&schema());
        assert_eq!(rec.bytes.len(), HEADER_LEN as usize + 100 * codec.size() + 7 * 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_then_scan_is_identity(n in 0usize..300, cap in 1u32..40, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.gcub");
            let (recs, k) = sorted_records(n, seed);
            write_sorted(&recs, &schema(), cap, k, &path).unwrap();
            let bf = BlockFile::open(&path, &schema()).unwrap();
            let back = bf.read_all().unwrap();
            prop_assert_eq!(&back, &recs);
            let blocks = bf.block_count();
            for b in 0..blocks.saturating_sub(1) {
                prop_assert_eq!(bf.block_len(b), cap as usize);
            }
        }
    }
}
