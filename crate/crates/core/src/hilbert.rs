//! Hilbert ranks over the dyadic grid, the resolution-adapting comparator and
//! the sort built on it.
//!
//! Ranks are computed top-down with a small state machine (entry corner and
//! principal direction of the current sub-hypercube, after Hamilton's
//! formulation). The state starts at the identity for every resolution, so the
//! first `k` digits of a rank depend only on the first `k` bits of each cell
//! coordinate:
//!
//! ```text
//! rank_{k+1}(r) div 2^d == rank_k(r)
//! ```
//!
//! This is what lets the comparator raise the resolution mid-sort without
//! invalidating any order established earlier, and what lets a cached rank be
//! extended instead of recomputed. The cell at the origin always has rank 0.
//!
//! Per level, with `n` dimensions, entry `e` and direction `d`:
//!
//! ```text
//! l = rotr(bits ^ e, d + 1)          // into the sub-cube's canonical frame
//! w = gray_inverse(l)                // digit appended to the rank
//! e = e ^ rotl(entry(w), d + 1)
//! d = (d + direction(w) + 1) mod n
//! ```

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{self, GridKey, MAX_RESOLUTION};
use crate::record::Record;
use crate::schema::{Schema, MAX_DIMENSIONS};

/// Position of a grid cell along the Hilbert curve: `resolution` digits of
/// `dims` bits each, most significant first. The numeric value is the
/// concatenation of the digits, `dims * resolution` bits wide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertRank {
    dims: u32,
    digits: Vec<u32>,
}

impl HilbertRank {
    fn empty(dims: u32) -> Self {
        HilbertRank {
            dims,
            digits: Vec::with_capacity(32),
        }
    }

    pub fn dims(&self) -> u32 {
        self.dims
    }

    pub fn resolution(&self) -> u32 {
        self.digits.len() as u32
    }

    pub fn bit_width(&self) -> u32 {
        self.dims * self.resolution()
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    /// The rank of the enclosing cell one level up (`rank div 2^d`).
    pub fn parent(&self) -> Option<HilbertRank> {
        let (_, rest) = self.digits.split_last()?;
        Some(HilbertRank {
            dims: self.dims,
            digits: rest.to_vec(),
        })
    }

    /// The rank truncated to resolution `k`.
    pub fn truncate(&self, k: u32) -> HilbertRank {
        HilbertRank {
            dims: self.dims,
            digits: self.digits[..(k as usize).min(self.digits.len())].to_vec(),
        }
    }

    /// Numeric value, when it fits.
    pub fn to_u128(&self) -> Option<u128> {
        if self.bit_width() > 128 {
            return None;
        }
        Some(
            self.digits
                .iter()
                .fold(0u128, |acc, &w| (acc << self.dims) | u128::from(w)),
        )
    }

    /// Big-endian bytes of the numeric value, `ceil(bit_width / 8)` long.
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let width = self.bit_width() as usize;
        let len = width.div_ceil(8);
        let mut out = vec![0u8; len];
        // bit position counted from the least significant end
        let mut pos = width;
        for &w in &self.digits {
            for b in (0..self.dims).rev() {
                pos -= 1;
                if (w >> b) & 1 == 1 {
                    out[len - 1 - pos / 8] |= 1 << (pos % 8);
                }
            }
        }
        out
    }

    pub fn from_be_bytes(dims: u32, resolution: u32, bytes: &[u8]) -> Result<HilbertRank> {
        let width = (dims * resolution) as usize;
        let len = width.div_ceil(8);
        if bytes.len() != len {
            return Err(Error::Corrupt {
                what: "rank",
                detail: format!("expected {len} bytes, got {}", bytes.len()),
            });
        }
        let mut pos = width;
        let digits = (0..resolution)
            .map(|_| {
                (0..dims).rev().fold(0u32, |acc, b| {
                    pos -= 1;
                    let bit = (bytes[len - 1 - pos / 8] >> (pos % 8)) & 1;
                    acc | (u32::from(bit) << b)
                })
            })
            .collect();
        Ok(HilbertRank { dims, digits })
    }
}

impl PartialOrd for HilbertRank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic on digits; equal-resolution ranks compare numerically.
impl Ord for HilbertRank {
    fn cmp(&self, other: &Self) -> Ordering {
        self.digits.cmp(&other.digits)
    }
}

impl fmt::Display for HilbertRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.digits.is_empty() {
            return f.write_str("0x0");
        }
        f.write_str("0x")?;
        for b in self.to_be_bytes() {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[inline]
fn mask(n: u32) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

/// Rotates the low `n` bits of `x` right by `r`, for `r < n`.
#[inline]
fn rotate_right(x: u32, r: u32, n: u32) -> u32 {
    if r == 0 {
        return x;
    }
    ((x >> r) | (x << (n - r))) & mask(n)
}

/// Rotates the low `n` bits of `x` left by `r`, for `r < n`.
#[inline]
fn rotate_left(x: u32, r: u32, n: u32) -> u32 {
    if r == 0 {
        return x;
    }
    rotate_right(x, n - r, n)
}

#[inline]
fn gray_code(i: u32) -> u32 {
    i ^ (i >> 1)
}

#[inline]
fn gray_inverse(mut g: u32) -> u32 {
    g ^= g >> 1;
    g ^= g >> 2;
    g ^= g >> 4;
    g ^= g >> 8;
    g ^= g >> 16;
    g
}

/// Entry corner of the `w`-th sub-hypercube.
#[inline]
fn entry_point(w: u32) -> u32 {
    if w == 0 {
        0
    } else {
        gray_code((w - 1) & !1)
    }
}

/// Axis along which the curve leaves the `w`-th sub-hypercube.
#[inline]
fn intra_direction(w: u32) -> u32 {
    if w == 0 {
        0
    } else if w & 1 == 1 {
        w.trailing_ones()
    } else {
        (w - 1).trailing_ones()
    }
}

/// Orientation of the sub-hypercube the curve is currently refining.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CurveState {
    entry: u32,
    dir: u32,
}

impl CurveState {
    /// Consumes one level of cell bits (dimension `i` in bit `i`) and returns
    /// the rank digit for that level.
    #[inline]
    fn step(&mut self, bits: u32, n: u32) -> u32 {
        let shift = if self.dir + 1 == n { 0 } else { self.dir + 1 };
        let l = rotate_right(bits ^ self.entry, shift, n);
        let w = gray_inverse(l);
        self.entry ^= rotate_left(entry_point(w), shift, n);
        // dir < n and intra_direction(w) <= n
        let mut dir = self.dir + intra_direction(w) + 1;
        while dir >= n {
            dir -= n;
        }
        self.dir = dir;
        w
    }
}

fn check_dims(d: usize) -> Result<u32> {
    if d == 0 || d > MAX_DIMENSIONS {
        return Err(Error::Precondition(format!(
            "{d} dimensions outside 1..={MAX_DIMENSIONS}"
        )));
    }
    Ok(d as u32)
}

/// Rank of the cell `cells` on the order-`k` curve.
pub fn hilbert_rank(cells: &[u64], k: u32) -> Result<HilbertRank> {
    let n = check_dims(cells.len())?;
    if k == 0 || k > 64 {
        return Err(Error::Precondition(format!("resolution {k} outside 1..=64")));
    }
    if let Some((i, c)) = cells.iter().enumerate().find(|(_, &c)| k < 64 && c >> k != 0) {
        return Err(Error::Precondition(format!(
            "cell coordinate {c} in dimension {i} outside [0, 2^{k})"
        )));
    }
    let mut state = CurveState::default();
    let digits = (0..k)
        .map(|level| {
            let shift = k - 1 - level;
            let bits = cells
                .iter()
                .enumerate()
                .fold(0u32, |acc, (i, &c)| acc | ((((c >> shift) & 1) as u32) << i));
            state.step(bits, n)
        })
        .collect();
    Ok(HilbertRank { dims: n, digits })
}

/// Hilbert rank of a record at resolution `k`.
pub fn record_rank(record: &Record, schema: &Schema, k: u32) -> Result<HilbertRank> {
    grid::check_resolution(k)?;
    Ok(RankCache::new(GridKey::of(record, schema)?).rank_at(k))
}

/// A record's grid key together with the deepest rank computed for it so far
/// and the curve state needed to extend that rank by further levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCache {
    key: GridKey,
    rank: HilbertRank,
    state: CurveState,
}

impl RankCache {
    pub fn new(key: GridKey) -> Self {
        let dims = key.dims() as u32;
        RankCache {
            key,
            rank: HilbertRank::empty(dims),
            state: CurveState::default(),
        }
    }

    pub fn key(&self) -> &GridKey {
        &self.key
    }

    /// The cached rank; its resolution is the deepest one computed.
    pub fn rank(&self) -> &HilbertRank {
        &self.rank
    }

    pub fn resolution(&self) -> u32 {
        self.rank.resolution()
    }

    /// Computes digits down to level `k`; returns how many were new.
    pub(crate) fn extend_to(&mut self, k: u32) -> u32 {
        let have = self.rank.resolution();
        let n = self.rank.dims;
        self.rank.digits.reserve(k.saturating_sub(have) as usize);
        for level in have..k {
            let bits = self.key.level_bits(level);
            self.rank.digits.push(self.state.step(bits, n));
        }
        k.saturating_sub(have)
    }

    /// Rank at resolution `k`, extending the cache when `k` is deeper than
    /// anything computed before.
    pub fn rank_at(&mut self, k: u32) -> HilbertRank {
        self.extend_to(k);
        self.rank.truncate(k)
    }

    /// Digit at `level`, computing any missing levels above it first.
    #[inline]
    pub(crate) fn digit(&mut self, level: u32, counter: &mut u64) -> u32 {
        if level >= self.rank.resolution() {
            *counter += u64::from(self.extend_to(level + 1));
        }
        self.rank.digits[level as usize]
    }

    fn prefix(&mut self, k: u32, counter: &mut u64) -> &[u32] {
        *counter += u64::from(self.extend_to(k));
        &self.rank.digits[..k as usize]
    }

    /// Drops the rank and keeps only the key.
    fn cleared(self) -> Self {
        RankCache::new(self.key)
    }
}

/// Counters describing the work one comparator performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompareStats {
    pub comparisons: u64,
    /// Rank digits computed, summed over all records.
    pub digits_computed: u64,
    /// Number of times the shared resolution was raised.
    pub refinements: u64,
}

/// Compares records on the Hilbert curve, raising a shared resolution
/// whenever two distinct records still share a cell.
///
/// The resolution only grows. Since ranks at a deeper resolution refine
/// ranks at a coarser one, every order decided earlier stays valid.
#[derive(Debug)]
pub struct HilbertComparator<'s> {
    schema: &'s Schema,
    resolution: u32,
    caching: bool,
    stats: CompareStats,
}

impl<'s> HilbertComparator<'s> {
    pub fn new(schema: &'s Schema, resolution: u32) -> Result<Self> {
        grid::check_resolution(resolution)?;
        check_dims(schema.dims())?;
        Ok(HilbertComparator {
            schema,
            resolution,
            caching: true,
            stats: CompareStats::default(),
        })
    }

    /// With caching off every comparison recomputes both ranks from scratch.
    pub fn with_rank_caching(mut self, enabled: bool) -> Self {
        self.caching = enabled;
        self
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn stats(&self) -> CompareStats {
        self.stats
    }

    pub fn schema(&self) -> &'s Schema {
        self.schema
    }

    /// Orders two records, refreshing their rank caches.
    pub fn compare(&mut self, a: &mut Record, b: &mut Record) -> Result<Ordering> {
        let mut ca = self.cache_for(a)?;
        let mut cb = self.cache_for(b)?;
        let ord = self.order(&mut ca, &mut cb);
        if self.caching {
            a.cached_rank = Some(ca);
            b.cached_rank = Some(cb);
        }
        Ok(ord)
    }

    /// Builds or revalidates the cache for a record. A cached rank is reused
    /// only if it was computed for the record's current key.
    pub(crate) fn cache_for(&self, r: &mut Record) -> Result<RankCache> {
        let key = GridKey::of(r, self.schema)?;
        Ok(match r.cached_rank.take() {
            Some(c) if c.key == key && self.caching => c,
            _ => RankCache::new(key),
        })
    }

    pub(crate) fn order(&mut self, a: &mut RankCache, b: &mut RankCache) -> Ordering {
        self.stats.comparisons += 1;
        if a.key == b.key {
            return Ordering::Equal;
        }
        if !self.caching {
            return self.order_uncached(a, b);
        }
        // Ranks are compared digit by digit so that digits below the first
        // difference are never computed.
        let mut level = 0;
        loop {
            while level < self.resolution {
                let da = a.digit(level, &mut self.stats.digits_computed);
                let db = b.digit(level, &mut self.stats.digits_computed);
                if da != db {
                    return da.cmp(&db);
                }
                level += 1;
            }
            self.refine();
        }
    }

    fn order_uncached(&mut self, a: &RankCache, b: &RankCache) -> Ordering {
        loop {
            let k = self.resolution;
            let mut scratch_a = a.clone().cleared();
            let mut scratch_b = b.clone().cleared();
            let ra = scratch_a.prefix(k, &mut self.stats.digits_computed);
            let rb = scratch_b.prefix(k, &mut self.stats.digits_computed);
            let ord = ra.cmp(rb);
            if ord != Ordering::Equal {
                return ord;
            }
            self.refine();
        }
    }

    fn refine(&mut self) {
        self.resolution += 1;
        self.stats.refinements += 1;
        assert!(
            self.resolution <= MAX_RESOLUTION,
            "distinct grid keys must separate by resolution {MAX_RESOLUTION}"
        );
    }
}

/// Compares two records at resolution `*k`, raising `*k` until they separate.
/// Records with equal grid keys compare `Equal` and leave `*k` untouched.
pub fn hilbert_compare(r1: &mut Record, r2: &mut Record, k: &mut u32, schema: &Schema) -> Result<Ordering> {
    let mut cmp = HilbertComparator::new(schema, *k)?;
    let ord = cmp.compare(r1, r2)?;
    *k = cmp.resolution();
    Ok(ord)
}

#[derive(Debug, Clone, Copy)]
pub struct SortOptions {
    pub rank_caching: bool,
    /// Starting resolution; defaults to [`grid::initial_resolution`].
    pub initial_resolution: Option<u32>,
}

impl Default for SortOptions {
    fn default() -> Self {
        SortOptions {
            rank_caching: true,
            initial_resolution: None,
        }
    }
}

#[derive(Debug)]
pub struct SortOutcome {
    pub records: Vec<Record>,
    pub resolution: u32,
    pub stats: CompareStats,
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    debug_assert_ne!(i, j);
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

/// Sorts records into Hilbert order with the adaptive comparator. Returns the
/// records and the final resolution. The sort is stable, so records with
/// equal keys keep their input order.
pub fn hilbert_sort(records: Vec<Record>, schema: &Schema) -> Result<(Vec<Record>, u32)> {
    let out = hilbert_sort_with(records, schema, SortOptions::default())?;
    Ok((out.records, out.resolution))
}

pub fn hilbert_sort_with(mut records: Vec<Record>, schema: &Schema, options: SortOptions) -> Result<SortOutcome> {
    let k0 = options
        .initial_resolution
        .unwrap_or_else(|| grid::initial_resolution(schema));
    let mut cmp = HilbertComparator::new(schema, k0)?.with_rank_caching(options.rank_caching);

    let mut caches = Vec::with_capacity(records.len());
    for r in &mut records {
        r.validate(schema)?;
        caches.push(cmp.cache_for(r)?);
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| {
        if i == j {
            return Ordering::Equal;
        }
        let (a, b) = pair_mut(&mut caches, i, j);
        cmp.order(a, b)
    });

    let mut slots: Vec<Option<(Record, RankCache)>> = records.into_iter().zip(caches).map(Some).collect();
    let caching = options.rank_caching;
    let records = order
        .into_iter()
        .map(|i| {
            let (mut r, c) = slots[i].take().expect("permutation visits each index once");
            r.cached_rank = caching.then_some(c);
            r
        })
        .collect();

    Ok(SortOutcome {
        records,
        resolution: cmp.resolution(),
        stats: cmp.stats(),
    })
}
