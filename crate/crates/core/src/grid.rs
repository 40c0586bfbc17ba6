//! Embedding of categorical and continuous coordinates on one dyadic grid.
//!
//! Every coordinate is first mapped to a fraction in `[0, 1)`. The cell of a
//! fraction `x` at resolution `k` is `floor(x * 2^k)`, so the cell at `k + 1`
//! is always `2c` or `2c + 1` for the cell `c` at `k`. Categorical ids occupy
//! the leading `ceil(log2 cardinality)` bits of their fraction; continuous
//! values are rescaled linearly from their declared bounds.

use crate::error::{Error, Result};
use crate::record::Record;
use crate::schema::{DimensionKind, DimensionSpec, Schema};

/// Finest supported resolution. A binary64 fraction in `[0, 1)` carries at
/// most 53 significant bits, so deeper grids cannot separate anything new.
pub const MAX_RESOLUTION: u32 = 53;

/// Largest fraction strictly below one; values at a continuous upper bound
/// land here so they stay in the last cell.
pub const MAX_FRACTION: f64 = 1.0 - f64::EPSILON / 2.0;

const KEY_SCALE: f64 = (1u64 << MAX_RESOLUTION) as f64;

/// `ceil(log2 n)`, with `n <= 1` giving 0.
pub fn ceil_log2(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

pub fn normalize(spec: &DimensionSpec, value: f64) -> Result<f64> {
    if !spec.contains(value) {
        return Err(Error::DomainViolation {
            dimension: spec.name.clone(),
            value,
        });
    }
    Ok(match spec.kind {
        DimensionKind::Categorical { cardinality } => {
            let bits = ceil_log2(cardinality);
            value / f64::from(1u32 << bits)
        }
        DimensionKind::Continuous { lo, hi } => {
            let x = (value - lo) / (hi - lo);
            if x >= 1.0 {
                MAX_FRACTION
            } else {
                x
            }
        }
    })
}

/// Cell coordinates of a fraction at the finest resolution. Coarser cells are
/// prefixes: the cell at resolution `k` is `key >> (MAX_RESOLUTION - k)`.
fn fraction_key(fraction: f64) -> u64 {
    // Exact: scaling by a power of two does not round, truncation is floor.
    (fraction * KEY_SCALE) as u64
}

/// A record's position on the finest grid, one 53-bit coordinate per
/// dimension. Two records with equal keys are the same point for ordering and
/// merge purposes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridKey(pub(crate) Vec<u64>);

impl GridKey {
    pub fn of(record: &Record, schema: &Schema) -> Result<GridKey> {
        if record.coords.len() != schema.dims() {
            return Err(Error::InvalidRecord(format!(
                "expected {} coordinates, got {}",
                schema.dims(),
                record.coords.len()
            )));
        }
        let mut key = Vec::with_capacity(schema.dims());
        for (spec, &v) in schema.dimensions().iter().zip(&record.coords) {
            key.push(fraction_key(normalize(spec, v)?));
        }
        Ok(GridKey(key))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[u64] {
        &self.0
    }

    /// Cell coordinates at resolution `k` (1 ..= [`MAX_RESOLUTION`]).
    pub fn cells(&self, k: u32) -> Result<Vec<u64>> {
        check_resolution(k)?;
        Ok(self.0.iter().map(|&c| c >> (MAX_RESOLUTION - k)).collect())
    }

    /// Bit `level` (0 = most significant) of every coordinate, packed with
    /// dimension `i` in bit `i`.
    #[inline]
    pub(crate) fn level_bits(&self, level: u32) -> u32 {
        let shift = MAX_RESOLUTION - 1 - level;
        self.0
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &c)| acc | ((((c >> shift) & 1) as u32) << i))
    }
}

pub(crate) fn check_resolution(k: u32) -> Result<()> {
    if k == 0 || k > MAX_RESOLUTION {
        return Err(Error::Precondition(format!(
            "resolution {k} outside 1..={MAX_RESOLUTION}"
        )));
    }
    Ok(())
}

pub fn cell_coords(record: &Record, schema: &Schema, k: u32) -> Result<Vec<u64>> {
    check_resolution(k)?;
    GridKey::of(record, schema)?.cells(k)
}

/// Starting resolution for ordering a view: enough bits for the largest
/// categorical dimension, and at least 1.
pub fn initial_resolution(schema: &Schema) -> u32 {
    schema
        .dimensions()
        .iter()
        .filter_map(|d| match d.kind {
            DimensionKind::Categorical { cardinality } => Some(ceil_log2(cardinality)),
            DimensionKind::Continuous { .. } => None,
        })
        .max()
        .unwrap_or(1)
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cont(lo: f64, hi: f64) -> DimensionSpec {
        DimensionSpec::continuous("x", lo, hi)
    }

    fn unit_schema() -> Schema {
        Schema::new(vec![cont(0.0, 1.0)], vec![]).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let c4 = DimensionSpec::categorical("c", 4);
        assert_eq!(normalize(&c4, 3.0).unwrap(), 0.75);
        assert_eq!(normalize(&cont(0.0, 10.0), 0.0).unwrap(), 0.0);
        assert_eq!(normalize(&cont(0.0, 10.0), 2.5).unwrap(), 0.25);
        assert_eq!(normalize(&DimensionSpec::categorical("one", 1), 0.0).unwrap(), 0.0);
        // 5 values use 3 bits
        assert_eq!(normalize(&DimensionSpec::categorical("c", 5), 4.0).unwrap(), 0.5);
    }

    #[test]
    fn upper_bound_clamps_below_one() {
        let x = normalize(&cont(0.0, 10.0), 10.0).unwrap();
        assert!(x < 1.0);
        assert_eq!(x, MAX_FRACTION);
        let r = Record::new(vec![10.0], vec![]);
        let s = Schema::new(vec![cont(0.0, 10.0)], vec![]).unwrap();
        for k in 1..=MAX_RESOLUTION {
            assert_eq!(cell_coords(&r, &s, k).unwrap()[0], (1u64 << k) - 1);
        }
    }

    #[test]
    fn domain_violation_names_dimension() {
        let err = normalize(&cont(0.0, 1.0), 1.5).unwrap_err();
        match err {
            Error::DomainViolation { dimension, .. } => assert_eq!(dimension, "x"),
            e => panic!("unexpected {e}"),
        }
        assert!(normalize(&DimensionSpec::categorical("c", 4), 4.0).is_err());
    }

    #[test]
    fn cell_examples() {
        let s = Schema::new(vec![DimensionSpec::categorical("c", 4)], vec![]).unwrap();
        let r = Record::new(vec![3.0], vec![]);
        assert_eq!(cell_coords(&r, &s, 2).unwrap(), vec![3]);
        assert_eq!(cell_coords(&r, &s, 3).unwrap(), vec![6]);

        let s = unit_schema();
        let a = Record::new(vec![0.30], vec![]);
        let b = Record::new(vec![0.40], vec![]);
        let at = |r: &Record, k| cell_coords(r, &s, k).unwrap()[0];
        assert_eq!((at(&a, 1), at(&b, 1)), (0, 0));
        assert_eq!((at(&a, 2), at(&b, 2)), (1, 1));
        assert_eq!((at(&a, 3), at(&b, 3)), (2, 3));

        let origin = Record::new(vec![0.0], vec![]);
        for k in 1..=MAX_RESOLUTION {
            assert_eq!(at(&origin, k), 0);
        }
    }

    #[test]
    fn resolution_bounds_checked() {
        let r = Record::new(vec![0.5], vec![]);
        assert!(cell_coords(&r, &unit_schema(), 0).is_err());
        assert!(cell_coords(&r, &unit_schema(), MAX_RESOLUTION + 1).is_err());
    }

    #[test]
    fn initial_resolution_examples() {
        let s = |cards: &[u32]| {
            let mut dims: Vec<_> = cards
                .iter()
                .enumerate()
                .map(|(i, &c)| DimensionSpec::categorical(format!("c{i}"), c))
                .collect();
            dims.push(cont(0.0, 1.0));
            Schema::new(dims, vec![]).unwrap()
        };
        assert_eq!(initial_resolution(&s(&[51, 3])), 6);
        assert_eq!(initial_resolution(&s(&[64])), 6);
        assert_eq!(initial_resolution(&s(&[65])), 7);
        assert_eq!(initial_resolution(&s(&[1])), 1);
        assert_eq!(initial_resolution(&unit_schema()), 1);
    }

    fn mixed_schema() -> Schema {
        Schema::new(
            vec![
                DimensionSpec::categorical("a", 51),
                DimensionSpec::continuous("x", -5.0, 1e6),
                DimensionSpec::categorical("b", 7),
                DimensionSpec::continuous("y", 0.0, 1.0),
            ],
            vec![],
        )
        .unwrap()
    }

    fn mixed_record() -> impl Strategy<Value = Record> {
        (0u32..51, -5.0..=1e6f64, 0u32..7, 0.0..=1.0f64)
            .prop_map(|(a, x, b, y)| Record::new(vec![f64::from(a), x, f64::from(b), y], vec![]))
    }

    proptest! {
        #[test]
        fn refinement_holds(r in mixed_record()) {
            let s = mixed_schema();
            let mut prev = cell_coords(&r, &s, 1).unwrap();
            for k in 2..=20 {
                let next = cell_coords(&r, &s, k).unwrap();
                for (p, n) in prev.iter().zip(&next) {
                    prop_assert!(*n == 2 * p || *n == 2 * p + 1);
                }
                prev = next;
            }
        }

        #[test]
        fn categorical_ids_separate_at_their_bit_budget(a in 0u32..51, b in 0u32..51, k in 6u32..=MAX_RESOLUTION) {
            prop_assume!(a != b);
            let spec = DimensionSpec::categorical("a", 51);
            let s = Schema::new(vec![spec], vec![]).unwrap();
            let ca = cell_coords(&Record::new(vec![f64::from(a)], vec![]), &s, k).unwrap();
            let cb = cell_coords(&Record::new(vec![f64::from(b)], vec![]), &s, k).unwrap();
            prop_assert_ne!(ca, cb);
        }

        #[test]
        fn monotone_in_value(x in -5.0..=1e6f64, y in -5.0..=1e6f64, k in 1u32..=MAX_RESOLUTION) {
            let spec = cont(-5.0, 1e6);
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(normalize(&spec, lo).unwrap() <= normalize(&spec, hi).unwrap());
            let s = Schema::new(vec![spec], vec![]).unwrap();
            let cl = cell_coords(&Record::new(vec![lo], vec![]), &s, k).unwrap()[0];
            let ch = cell_coords(&Record::new(vec![hi], vec![]), &s, k).unwrap()[0];
            prop_assert!(cl <= ch);
            prop_assert!(ch < 1u64 << k);
        }
    }
}
