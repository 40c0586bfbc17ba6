//! Fixed-grid ordering: pick one resolution for the whole dataset up front,
//! compute every record's full rank there, and sort by rank.
//!
//! Used as the comparison point for the adaptive sort. It shares the rank
//! routine with the adaptive path so timings differ only by strategy.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::grid::{self, GridKey, MAX_RESOLUTION};
use crate::hilbert::{hilbert_rank, HilbertRank};
use crate::record::Record;
use crate::schema::Schema;

fn separates(keys: &[GridKey], k: u32) -> bool {
    let mut cells: HashSet<Vec<u64>> = HashSet::with_capacity(keys.len());
    keys.iter()
        .all(|key| cells.insert(key.cells(k).expect("resolution in range")))
}

/// Smallest resolution, no lower than the categorical bound, at which all
/// records with distinct keys fall into distinct cells. Found by doubling
/// until the cells separate, then bisecting the last step.
pub fn required_static_resolution(records: &[Record], schema: &Schema) -> Result<u32> {
    let mut keys: Vec<GridKey> = records
        .iter()
        .map(|r| r.validate(schema).and_then(|_| GridKey::of(r, schema)))
        .collect::<Result<_>>()?;
    keys.sort_unstable_by(|a, b| a.coords().cmp(b.coords()));
    keys.dedup();

    let k0 = grid::initial_resolution(schema);
    if separates(&keys, k0) {
        return Ok(k0);
    }
    let mut failing = k0;
    let mut k = k0;
    loop {
        if k == MAX_RESOLUTION {
            return Err(Error::Unseparable { max: MAX_RESOLUTION });
        }
        k = (2 * k).min(MAX_RESOLUTION);
        if separates(&keys, k) {
            break;
        }
        failing = k;
    }
    // Separation is monotone in k: cells at k+1 refine cells at k.
    let (mut lo, mut hi) = (failing, k);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if separates(&keys, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sorts by ranks materialized at `k`. Stable, so records with equal keys
/// keep input order. Fails if two distinct keys share a cell at `k`.
pub fn prediscretize_sort(records: Vec<Record>, schema: &Schema, k: u32) -> Result<Vec<Record>> {
    grid::check_resolution(k)?;
    let mut ranked: Vec<(HilbertRank, Record)> = Vec::with_capacity(records.len());
    let mut cell_owner: HashMap<Vec<u64>, GridKey> = HashMap::with_capacity(records.len());
    for r in records {
        r.validate(schema)?;
        let key = GridKey::of(&r, schema)?;
        let cells = key.cells(k)?;
        let rank = hilbert_rank(&cells, k)?;
        match cell_owner.get(&cells) {
            Some(owner) if *owner != key => {
                return Err(Error::Precondition(format!(
                    "resolution {k} leaves distinct records in the same cell"
                )))
            }
            Some(_) => {}
            None => {
                cell_owner.insert(cells, key);
            }
        }
        ranked.push((rank, r));
    }
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ranked.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{hilbert_sort_with, SortOptions};
    use crate::schema::DimensionSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_categorical_needs_only_the_id_bits() {
        let s = Schema::new(
            vec![DimensionSpec::categorical("a", 51), DimensionSpec::categorical("b", 3)],
            vec![],
        )
        .unwrap();
        let recs: Vec<Record> = (0..51)
            .flat_map(|a| (0..3).map(move |b| Record::new(vec![f64::from(a), f64::from(b)], vec![])))
            .collect();
        assert_eq!(required_static_resolution(&recs, &s).unwrap(), 6);
    }

    #[test]
    fn nearby_values_need_their_distinguishing_bit() {
        let s = Schema::new(vec![DimensionSpec::continuous("x", 0.0, 1.0)], vec![]).unwrap();
        let two = [Record::new(vec![0.30], vec![]), Record::new(vec![0.40], vec![])];
        assert_eq!(required_static_resolution(&two, &s).unwrap(), 3);

        let x = 0.5;
        let close = [
            Record::new(vec![x], vec![]),
            Record::new(vec![x + 2f64.powi(-20)], vec![]),
        ];
        assert_eq!(required_static_resolution(&close, &s).unwrap(), 20);
        assert!(prediscretize_sort(close.to_vec(), &s, 19).is_err());
        assert!(prediscretize_sort(close.to_vec(), &s, 20).is_ok());
    }

    #[test]
    fn one_tight_pair_forces_the_whole_grid() {
        let s = Schema::new(
            vec![
                DimensionSpec::categorical("c", 4),
                DimensionSpec::continuous("x", 0.0, 1.0),
            ],
            vec![],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut recs: Vec<Record> = (0..200)
            .map(|_| Record::new(vec![f64::from(rng.random_range(0..4u32)), rng.random()], vec![]))
            .collect();
        recs.push(Record::new(vec![0.0, 0.25], vec![]));
        recs.push(Record::new(vec![0.0, 0.25 + 2f64.powi(-30)], vec![]));
        let ks = required_static_resolution(&recs, &s).unwrap();
        assert!(ks >= 30);
        let adaptive = hilbert_sort_with(recs.clone(), &s, SortOptions::default()).unwrap();
        assert!(adaptive.resolution <= ks);
        assert_eq!(prediscretize_sort(recs, &s, ks).unwrap(), adaptive.records);
    }

    #[test]
    fn duplicates_and_empty_input() {
        let s = Schema::new(vec![DimensionSpec::continuous("x", 0.0, 1.0)], vec!["m".into()]).unwrap();
        assert_eq!(required_static_resolution(&[], &s).unwrap(), 1);
        let dup = [Record::new(vec![0.7], vec![1.0]), Record::new(vec![0.7], vec![2.0])];
        assert_eq!(required_static_resolution(&dup, &s).unwrap(), 1);
        let sorted = prediscretize_sort(dup.to_vec(), &s, 1).unwrap();
        assert_eq!(sorted, dup.to_vec());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn agrees_with_adaptive_sort(seed in any::<u64>(), n in 0usize..300, spread in 1u32..40) {
            let s = Schema::new(
                vec![
                    DimensionSpec::categorical("c", 7),
                    DimensionSpec::continuous("x", 0.0, 1.0),
                    DimensionSpec::continuous("y", -1.0, 1.0),
                ],
                vec!["m".into()],
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 2f64.powi(-(spread as i32));
            let recs: Vec<Record> = (0..n)
                .map(|i| {
                    Record::new(
                        vec![f64::from(rng.random_range(0..7u32)), 0.5 + scale * rng.random::<f64>() * 0.5, rng.random_range(-1.0..1.0)],
                        vec![i as f64],
                    )
                })
                .collect();
            let ks = required_static_resolution(&recs, &s).unwrap();
            let adaptive = hilbert_sort_with(recs.clone(), &s, SortOptions::default()).unwrap();
            prop_assert!(adaptive.resolution <= ks);
            prop_assert_eq!(prediscretize_sort(recs, &s, ks).unwrap(), adaptive.records);
        }
    }
}
