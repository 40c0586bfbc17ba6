//! Bulk-loaded tree over a block file. Level-0 nodes point at blocks; every
//! upper level groups consecutive nodes of the level below, so a subtree
//! always covers a contiguous block range. Each node carries the minimum
//! bounding box of the records below it and their pre-computed aggregates.
//!
//! File layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GIDX"
//!      4     2  format version (1)
//!      6     2  flags (0)
//!      8    32  schema digest of the block file
//!     40     4  payload fingerprint of the block file
//!     44     4  fanout F
//!     48     8  record count
//!     56     8  block count
//!     64     4  resolution k_f
//!     68     4  dimension count d
//!     72     4  measure count m
//!     76     8  node count
//!     84     4  CRC-32 of bytes 0..84
//!     88        nodes, root first, one level after another
//!      …     4  CRC-32 of the node bytes
//! ```
//!
//! A node is `level: u32, child_first: u64, child_count: u32,
//! block_first: u64, block_end: u64, count: u64`, then the box (`d` minima,
//! `d` maxima, `f64`), then `m` triples of `f64` (sum, min, max), then the
//! rank of the block's first record at `k_f` (`ceil(d * k_f / 8)` bytes,
//! zero for nodes above level 0). For level-0 nodes `child_first` is the
//! block id.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use crate::block_store::BlockFile;
use crate::error::{Error, Result};
use crate::hilbert::{record_rank, HilbertRank};
use crate::record::Record;
use crate::schema::{DimensionKind, Schema};

pub const INDEX_MAGIC: [u8; 4] = *b"GIDX";
pub const INDEX_FORMAT_VERSION: u16 = 1;
pub const DEFAULT_FANOUT: u32 = 64;
const INDEX_HEADER_LEN: usize = 88;

/// Per-dimension closed interval in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoundingBox {
    /// The box containing nothing; the identity of [`BoundingBox::union`].
    pub fn empty(dims: usize) -> Self {
        BoundingBox {
            min: vec![f64::INFINITY; dims],
            max: vec![f64::NEG_INFINITY; dims],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.iter().zip(&self.max).any(|(lo, hi)| lo > hi)
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn expand(&mut self, point: &[f64]) {
        for ((lo, hi), &v) in self.min.iter_mut().zip(&mut self.max).zip(point) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }

    pub fn union(&mut self, other: &BoundingBox) {
        for i in 0..self.min.len() {
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
    }

    pub fn contains_point(&self, point: &[f64]) -> bool {
        self.min
            .iter()
            .zip(&self.max)
            .zip(point)
            .all(|((lo, hi), v)| lo <= v && v <= hi)
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.is_empty() || (0..self.min.len()).all(|i| self.min[i] <= other.min[i] && other.max[i] <= self.max[i])
    }

    /// Overlap volume with `other`, each axis scaled to the unit interval of
    /// its dimension's domain. Categorical intervals `[a, b]` are treated as
    /// the cells `[a, b + 1)`.
    pub fn normalized_overlap(&self, other: &BoundingBox, schema: &Schema) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        schema
            .dimensions()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let (lo, hi) = (self.min[i].max(other.min[i]), self.max[i].min(other.max[i]));
                match spec.kind {
                    DimensionKind::Categorical { cardinality } => ((hi + 1.0 - lo) / f64::from(cardinality)).max(0.0),
                    DimensionKind::Continuous { lo: dlo, hi: dhi } => ((hi - lo) / (dhi - dlo)).max(0.0),
                }
            })
            .product()
    }
}

/// Distributive summary of one measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureSummary {
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

impl MeasureSummary {
    pub const EMPTY: MeasureSummary = MeasureSummary {
        sum: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeAggregate {
    pub count: u64,
    pub measures: Vec<MeasureSummary>,
}

impl NodeAggregate {
    pub fn empty(measures: usize) -> Self {
        NodeAggregate {
            count: 0,
            measures: vec![MeasureSummary::EMPTY; measures],
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        self.count += 1;
        for (s, &v) in self.measures.iter_mut().zip(values) {
            s.sum += v;
            s.min = s.min.min(v);
            s.max = s.max.max(v);
        }
    }

    pub fn merge(&mut self, other: &NodeAggregate) {
        self.count += other.count;
        for (s, o) in self.measures.iter_mut().zip(&other.measures) {
            s.sum += o.sum;
            s.min = s.min.min(o.min);
            s.max = s.max.max(o.max);
        }
    }
}

/// Combines the summaries of a node's children into the node's own.
pub fn node_annotate<'a, I>(children: I) -> Option<(BoundingBox, NodeAggregate)>
where
    I: IntoIterator<Item = (&'a BoundingBox, &'a NodeAggregate)>,
{
    let mut it = children.into_iter();
    let (b, a) = it.next()?;
    let (mut bbox, mut agg) = (b.clone(), a.clone());
    for (b, a) in it {
        bbox.union(b);
        agg.merge(a);
    }
    Some((bbox, agg))
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeChildren {
    /// Level 0: one block and the rank of its first record.
    Block { block: u64, first_rank: HilbertRank },
    /// Upper levels: a contiguous run of node ids one level down.
    Nodes { first: u64, count: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexNode {
    pub level: u32,
    pub bbox: BoundingBox,
    pub aggregate: NodeAggregate,
    pub children: NodeChildren,
    /// Blocks covered by the subtree.
    pub blocks: Range<u64>,
}

impl IndexNode {
    pub fn child_ids(&self) -> Range<usize> {
        match self.children {
            NodeChildren::Nodes { first, count } => first as usize..(first as usize + count as usize),
            NodeChildren::Block { .. } => 0..0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexHeader {
    pub schema_digest: [u8; 32],
    pub fingerprint: u32,
    pub fanout: u32,
    pub record_count: u64,
    pub block_count: u64,
    pub resolution: u32,
    pub dims: u32,
    pub measures: u32,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LevelSummary {
    pub level: u32,
    pub nodes: usize,
    /// Mean normalized overlap volume over pairs of siblings at this level.
    pub mean_sibling_overlap: f64,
    pub sibling_pairs: u64,
}

/// The index. Nodes are stored root first, level by level down to level 0;
/// an empty view has no nodes at all.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTree {
    header: IndexHeader,
    nodes: Vec<IndexNode>,
}

/// Splits `n` consecutive items into `ceil(n / fanout)` runs whose lengths
/// differ by at most one.
fn balanced_groups(n: usize, fanout: usize) -> Vec<Range<usize>> {
    let groups = n.div_ceil(fanout);
    let (base, extra) = (n / groups, n % groups);
    let mut start = 0;
    (0..groups)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn summarize_block(records: &[Record], dims: usize, measures: usize) -> (BoundingBox, NodeAggregate) {
    let mut bbox = BoundingBox::empty(dims);
    let mut agg = NodeAggregate::empty(measures);
    for r in records {
        bbox.expand(&r.coords);
        agg.add(&r.measures);
    }
    (bbox, agg)
}

/// Builds the index in one pass over the block file.
pub fn build_index(blocks: &BlockFile, schema: &Schema, fanout: u32) -> Result<IndexTree> {
    if fanout < 2 {
        return Err(Error::Precondition(format!("fanout {fanout} below 2")));
    }
    let h = blocks.header();
    let header = IndexHeader {
        schema_digest: h.schema_digest,
        fingerprint: h.fingerprint,
        fanout,
        record_count: h.record_count,
        block_count: h.block_count(),
        resolution: h.resolution,
        dims: h.dims,
        measures: h.measures,
    };
    let (d, m) = (schema.dims(), schema.measure_count());

    let mut level: Vec<IndexNode> = Vec::with_capacity(h.block_count() as usize);
    for b in 0..h.block_count() {
        let records = blocks.read_block(b)?;
        let (bbox, aggregate) = summarize_block(&records, d, m);
        let first_rank = record_rank(&records[0], schema, h.resolution)?;
        level.push(IndexNode {
            level: 0,
            bbox,
            aggregate,
            children: NodeChildren::Block { block: b, first_rank },
            blocks: b..b + 1,
        });
    }

    // Built bottom-up with level-local child ids, then renumbered root first.
    let mut levels = vec![];
    while level.len() > 1 {
        let parent_level = level[0].level + 1;
        let parents = balanced_groups(level.len(), fanout as usize)
            .into_iter()
            .map(|g| {
                let kids = &level[g.clone()];
                let (bbox, aggregate) =
                    node_annotate(kids.iter().map(|n| (&n.bbox, &n.aggregate))).expect("non-empty group");
                IndexNode {
                    level: parent_level,
                    bbox,
                    aggregate,
                    children: NodeChildren::Nodes {
                        first: g.start as u64,
                        count: g.len() as u32,
                    },
                    blocks: kids[0].blocks.start..kids[kids.len() - 1].blocks.end,
                }
            })
            .collect();
        levels.push(std::mem::replace(&mut level, parents));
    }
    if !level.is_empty() {
        levels.push(level);
    }
    levels.reverse();

    let mut offsets = Vec::with_capacity(levels.len());
    let mut acc = 0u64;
    for l in &levels {
        offsets.push(acc);
        acc += l.len() as u64;
    }
    let mut nodes = Vec::with_capacity(acc as usize);
    for (i, l) in levels.into_iter().enumerate() {
        for mut node in l {
            if let NodeChildren::Nodes { first, .. } = &mut node.children {
                *first += offsets[i + 1];
            }
            nodes.push(node);
        }
    }
    Ok(IndexTree { header, nodes })
}

impl IndexTree {
    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn nodes(&self) -> &[IndexNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &IndexNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> Option<&IndexNode> {
        self.nodes.first()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Number of levels; 0 for an empty view.
    pub fn height(&self) -> u32 {
        self.root().map_or(0, |r| r.level + 1)
    }

    pub fn nodes_per_level(&self) -> Vec<(u32, usize)> {
        let mut out: Vec<(u32, usize)> = Vec::new();
        for n in &self.nodes {
            match out.last_mut() {
                Some((l, c)) if *l == n.level => *c += 1,
                _ => out.push((n.level, 1)),
            }
        }
        out
    }

    /// Fails if the index was not built from exactly this block file.
    pub fn check_matches(&self, blocks: &BlockFile) -> Result<()> {
        let h = blocks.header();
        let mismatch = |what: &str| Err(Error::StaleIndex(format!("{what} differs from block file")));
        if self.header.schema_digest != h.schema_digest {
            return mismatch("schema digest");
        }
        if self.header.fingerprint != h.fingerprint {
            return mismatch("payload fingerprint");
        }
        if self.header.record_count != h.record_count || self.header.block_count != h.block_count() {
            return mismatch("record or block count");
        }
        if self.header.resolution != h.resolution {
            return mismatch("resolution");
        }
        Ok(())
    }

    /// Node counts and mean sibling-box overlap per level, top level first.
    pub fn level_summaries(&self, schema: &Schema) -> Vec<LevelSummary> {
        let mut out: Vec<LevelSummary> = self
            .nodes_per_level()
            .into_iter()
            .map(|(level, nodes)| LevelSummary {
                level,
                nodes,
                mean_sibling_overlap: 0.0,
                sibling_pairs: 0,
            })
            .collect();
        let mut totals = vec![0.0f64; out.len()];
        for parent in &self.nodes {
            let kids = parent.child_ids();
            if kids.is_empty() {
                continue;
            }
            let slot = out.len() - parent.level as usize;
            for i in kids.clone() {
                for j in i + 1..kids.end {
                    totals[slot] += self.nodes[i].bbox.normalized_overlap(&self.nodes[j].bbox, schema);
                    out[slot].sibling_pairs += 1;
                }
            }
        }
        for (s, t) in out.iter_mut().zip(totals) {
            if s.sibling_pairs > 0 {
                s.mean_sibling_overlap = t / s.sibling_pairs as f64;
            }
        }
        out
    }

    fn rank_len(&self) -> usize {
        (self.header.dims as usize * self.header.resolution as usize).div_ceil(8)
    }

    fn node_len(&self) -> usize {
        let (d, m) = (self.header.dims as usize, self.header.measures as usize);
        4 + 8 + 4 + 8 + 8 + 8 + 16 * d + 24 * m + self.rank_len()
    }

    fn encode_header(&self) -> [u8; INDEX_HEADER_LEN] {
        let h = &self.header;
        let mut b = [0u8; INDEX_HEADER_LEN];
        b[0..4].copy_from_slice(&INDEX_MAGIC);
        b[4..6].copy_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        b[8..40].copy_from_slice(&h.schema_digest);
        b[40..44].copy_from_slice(&h.fingerprint.to_le_bytes());
        b[44..48].copy_from_slice(&h.fanout.to_le_bytes());
        b[48..56].copy_from_slice(&h.record_count.to_le_bytes());
        b[56..64].copy_from_slice(&h.block_count.to_le_bytes());
        b[64..68].copy_from_slice(&h.resolution.to_le_bytes());
        b[68..72].copy_from_slice(&h.dims.to_le_bytes());
        b[72..76].copy_from_slice(&h.measures.to_le_bytes());
        b[76..84].copy_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        let crc = crc32fast::hash(&b[..84]);
        b[84..88].copy_from_slice(&crc.to_le_bytes());
        b
    }

    fn encode_node(&self, n: &IndexNode, out: &mut Vec<u8>) {
        let (child_first, child_count) = match &n.children {
            NodeChildren::Block { block, .. } => (*block, 1u32),
            NodeChildren::Nodes { first, count } => (*first, *count),
        };
        out.extend_from_slice(&n.level.to_le_bytes());
        out.extend_from_slice(&child_first.to_le_bytes());
        out.extend_from_slice(&child_count.to_le_bytes());
        out.extend_from_slice(&n.blocks.start.to_le_bytes());
        out.extend_from_slice(&n.blocks.end.to_le_bytes());
        out.extend_from_slice(&n.aggregate.count.to_le_bytes());
        for v in n.bbox.min.iter().chain(&n.bbox.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &n.aggregate.measures {
            for v in [s.sum, s.min, s.max] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &n.children {
            NodeChildren::Block { first_rank, .. } => out.extend_from_slice(&first_rank.to_be_bytes()),
            NodeChildren::Nodes { .. } => out.resize(out.len() + self.rank_len(), 0),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(INDEX_HEADER_LEN + self.nodes.len() * self.node_len() + 4);
        out.extend_from_slice(&self.encode_header());
        for n in &self.nodes {
            self.encode_node(n, &mut out);
        }
        let crc = crc32fast::hash(&out[INDEX_HEADER_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |detail: &str| Error::Corrupt {
            what: "index file",
            detail: detail.to_owned(),
        };
        if bytes.len() < INDEX_HEADER_LEN + 4 {
            return Err(corrupt("truncated header"));
        }
        if bytes[0..4] != INDEX_MAGIC {
            return Err(Error::BadMagic { expected: "GIDX" });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != INDEX_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "index",
                found: version,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(84) != crc32fast::hash(&bytes[..84]) {
            return Err(corrupt("header checksum mismatch"));
        }
        let header = IndexHeader {
            schema_digest: bytes[8..40].try_into().unwrap(),
            fingerprint: u32_at(40),
            fanout: u32_at(44),
            record_count: u64_at(48),
            block_count: u64_at(56),
            resolution: u32_at(64),
            dims: u32_at(68),
            measures: u32_at(72),
        };
        let node_count = u64_at(76) as usize;
        let mut tree = IndexTree {
            header,
            nodes: Vec::with_capacity(node_count),
        };
        let node_len = tree.node_len();
        let body_end = node_count
            .checked_mul(node_len)
            .and_then(|n| n.checked_add(INDEX_HEADER_LEN))
            .ok_or_else(|| corrupt("node count overflows"))?;
        if bytes.len() != body_end + 4 {
            return Err(corrupt("length disagrees with node count"));
        }
        let body = &bytes[INDEX_HEADER_LEN..body_end];
        if crc32fast::hash(body) != u32_at(body_end) {
            return Err(corrupt("node checksum mismatch"));
        }
        let (d, m) = (tree.header.dims as usize, tree.header.measures as usize);
        let rank_len = tree.rank_len();
        for raw in body.chunks_exact(node_len) {
            let mut pos = 0;
            let mut take = |n: usize| {
                let s = &raw[pos..pos + n];
                pos += n;
                s
            };
            let level = u32::from_le_bytes(take(4).try_into().unwrap());
            let child_first = u64::from_le_bytes(take(8).try_into().unwrap());
            let child_count = u32::from_le_bytes(take(4).try_into().unwrap());
            let block_first = u64::from_le_bytes(take(8).try_into().unwrap());
            let block_end = u64::from_le_bytes(take(8).try_into().unwrap());
            let count = u64::from_le_bytes(take(8).try_into().unwrap());
            let mut f64s = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| f64::from_le_bytes(take(8).try_into().unwrap()))
                    .collect()
            };
            let min = f64s(d);
            let max = f64s(d);
            let sums = f64s(3 * m);
            let rank_bytes = take(rank_len);
            let children = if level == 0 {
                NodeChildren::Block {
                    block: child_first,
                    first_rank: HilbertRank::from_be_bytes(tree.header.dims, tree.header.resolution, rank_bytes)?,
                }
            } else {
                if child_first + u64::from(child_count) > node_count as u64 {
                    return Err(corrupt("child reference out of range"));
                }
                NodeChildren::Nodes {
                    first: child_first,
                    count: child_count,
                }
            };
            tree.nodes.push(IndexNode {
                level,
                bbox: BoundingBox { min, max },
                aggregate: NodeAggregate {
                    count,
                    measures: sums
                        .chunks_exact(3)
                        .map(|c| MeasureSummary {
                            sum: c[0],
                            min: c[1],
                            max: c[2],
                        })
                        .collect(),
                },
                children,
                blocks: block_first..block_end,
            });
        }
        Ok(tree)
    }
}

pub fn save_index(tree: &IndexTree, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&tree.to_bytes()).map_err(Error::io(path))?;
    let file = w.into_inner().map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e.into_error(),
    })?;
    file.sync_all().map_err(Error::io(path))
}

pub fn load_index(path: &Path) -> Result<IndexTree> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    IndexTree::from_bytes(&bytes)
}

/// Loads an index and verifies it belongs to `blocks`.
pub fn open_index(path: &Path, blocks: &BlockFile) -> Result<IndexTree> {
    let tree = load_index(path)?;
    tree.check_matches(blocks)?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_store::write_sorted;
    use crate::hilbert::hilbert_sort;
    use crate::schema::DimensionSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> Schema {
        Schema::new(
            vec![
                DimensionSpec::categorical("c", 20),
                DimensionSpec::continuous("x", 0.0, 100.0),
                DimensionSpec::continuous("y", -1.0, 1.0),
            ],
            vec!["m".into()],
        )
        .unwrap()
    }

    fn view(n: usize, cap: u32, seed: u64) -> (tempfile::TempDir, BlockFile, Vec<Record>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<Record> = (0..n)
            .map(|_| {
                Record::new(
                    vec![
                        f64::from(rng.random_range(0..20u32)),
                        rng.random_range(0.0..100.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    vec![rng.random_range(-10.0..10.0)],
                )
            })
            .collect();
        let (sorted, k) = hilbert_sort(recs, &schema()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.gcub");
        write_sorted(&sorted, &schema(), cap, k, &path).unwrap();
        let bf = BlockFile::open(&path, &schema()).unwrap();
        (dir, bf, sorted)
    }

    #[test]
    fn nine_blocks_fanout_three() {
        let (_d, bf, _) = view(9 * 4, 4, 1);
        let t = build_index(&bf, &schema(), 3).unwrap();
        assert_eq!(t.nodes_per_level(), vec![(2, 1), (1, 3), (0, 9)]);
        assert_eq!(t.height(), 3);
    }

    #[test]
    fn single_block_root_is_leaf_node() {
        let (_d, bf, recs) = view(7, 16, 2);
        let t = build_index(&bf, &schema(), 4).unwrap();
        assert_eq!(t.len(), 1);
        let root = t.root().unwrap();
        assert_eq!(root.level, 0);
        assert_eq!(root.aggregate.count, 7);
        let mut bbox = BoundingBox::empty(3);
        for r in &recs {
            bbox.expand(&r.coords);
        }
        assert_eq!(root.bbox, bbox);
        assert_eq!(
            root.children,
            NodeChildren::Block {
                block: 0,
                first_rank: record_rank(&recs[0], &schema(), bf.header().resolution).unwrap()
            }
        );
    }

    #[test]
    fn empty_view_gives_empty_index() {
        let (_d, bf, _) = view(0, 16, 3);
        let t = build_index(&bf, &schema(), 4).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.height(), 0);
        assert_eq!(IndexTree::from_bytes(&t.to_bytes()).unwrap(), t);
    }

    #[test]
    fn annotate_examples() {
        let b = BoundingBox {
            min: vec![0.0],
            max: vec![1.0],
        };
        let mut a = NodeAggregate::empty(1);
        a.add(&[1.5]);
        a.count = 4;
        let (bb, aa) = node_annotate([(&b, &a)]).unwrap();
        assert_eq!((bb, aa.clone()), (b.clone(), a.clone()));

        let b2 = BoundingBox {
            min: vec![-2.0],
            max: vec![0.5],
        };
        let mut a2 = NodeAggregate::empty(1);
        a2.add(&[-0.5]);
        a2.count = 6;
        let (bb, aa) = node_annotate([(&b, &a), (&b2, &a2)]).unwrap();
        assert_eq!(aa.count, 10);
        assert_eq!(aa.measures[0].sum, 1.0);
        assert_eq!(aa.measures[0].min, -0.5);
        assert_eq!(aa.measures[0].max, 1.5);
        assert_eq!(
            bb,
            BoundingBox {
                min: vec![-2.0],
                max: vec![1.0]
            }
        );
        assert!(node_annotate(std::iter::empty()).is_none());
    }

    #[test]
    fn balanced_groups_keep_two_children_for_fanout_three_and_up() {
        for fanout in 3..10 {
            for n in 2..200 {
                let g = balanced_groups(n, fanout);
                assert_eq!(g.len(), n.div_ceil(fanout));
                assert!(g.iter().all(|r| r.len() >= 2 && r.len() <= fanout), "n={n} F={fanout}");
                assert_eq!(g.last().unwrap().end, n);
            }
        }
    }

    fn fold(records: &[Record]) -> (BoundingBox, NodeAggregate) {
        summarize_block(records, 3, 1)
    }

    #[test]
    fn containment_and_aggregate_consistency() {
        let (_d, bf, recs) = view(3000, 7, 4);
        let t = build_index(&bf, &schema(), 5).unwrap();
        let cap = bf.header().block_capacity as usize;
        let expected_height = {
            let mut h = 1;
            let mut n = bf.block_count();
            while n > 1 {
                n = n.div_ceil(5);
                h += 1;
            }
            h
        };
        assert_eq!(t.height(), expected_height);
        for node in t.nodes() {
            let lo = node.blocks.start as usize * cap;
            let hi = (node.blocks.end as usize * cap).min(recs.len());
            let below = &recs[lo..hi];
            let (bbox, agg) = fold(below);
            assert!(below.iter().all(|r| node.bbox.contains_point(&r.coords)));
            assert_eq!(node.bbox, bbox);
            assert_eq!(node.aggregate.count, agg.count);
            assert_eq!(node.aggregate.measures[0].min, agg.measures[0].min);
            assert_eq!(node.aggregate.measures[0].max, agg.measures[0].max);
            let rel = (node.aggregate.measures[0].sum - agg.measures[0].sum).abs() / agg.measures[0].sum.abs().max(1.0);
            assert!(rel < 1e-9);
            for c in node.child_ids() {
                assert!(node.bbox.contains_box(&t.node(c).bbox));
                assert_eq!(t.node(c).level + 1, node.level);
            }
            if node.level > 0 && node.level + 1 < t.height() {
                assert!(node.child_ids().len() >= 2);
            }
        }
        let summaries = t.level_summaries(&schema());
        assert!(summaries.iter().all(|s| s.mean_sibling_overlap.is_finite()));
        assert_eq!(summaries.last().unwrap().nodes as u64, bf.block_count());
    }

    #[test]
    fn save_load_and_staleness() {
        let (d, bf, _) = view(500, 8, 5);
        let t = build_index(&bf, &schema(), 4).unwrap();
        let path = d.path().join("v.gidx");
        save_index(&t, &path).unwrap();
        assert_eq!(open_index(&path, &bf).unwrap(), t);

        // a different block file with the same schema is detected
        let (_d2, other, _) = view(500, 8, 6);
        assert!(matches!(open_index(&path, &other), Err(Error::StaleIndex(_))));

        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        assert!(IndexTree::from_bytes(&bytes).is_err());
        bytes[0] = b'?';
        assert!(matches!(IndexTree::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }
}
