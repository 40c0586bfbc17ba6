//! Seeded dataset and query-workload generation.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::QueryRegion;
use crate::record::Record;
use crate::schema::{DimensionKind, DimensionSpec, Schema};

pub const DEFAULT_CARDINALITY: u32 = 64;
pub const DEFAULT_DISTINCT: u32 = 1000;
/// Continuous dimensions span `[0, CONTINUOUS_HI]`.
pub const CONTINUOUS_HI: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Clustered,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "clustered" => Ok(Distribution::Clustered),
            other => Err(Error::InvalidConfig(format!("unknown distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Cardinality of each categorical dimension.
    pub categorical: Vec<u32>,
    /// Number of distinct values of each continuous dimension.
    pub continuous: Vec<u32>,
    pub records: usize,
    #[serde(default = "default_measures")]
    pub measures: usize,
    pub distribution: Distribution,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    pub seed: u64,
}

fn default_measures() -> usize {
    1
}

fn default_clusters() -> usize {
    8
}

impl GeneratorConfig {
    /// `d_cat` categorical dimensions of cardinality 64 and `d_cont`
    /// continuous ones with 1000 distinct values each.
    pub fn synthetic(d_cat: usize, d_cont: usize, records: usize, distribution: Distribution, seed: u64) -> Self {
        GeneratorConfig {
            categorical: vec![DEFAULT_CARDINALITY; d_cat],
            continuous: vec![DEFAULT_DISTINCT; d_cont],
            records,
            measures: 1,
            distribution,
            clusters: default_clusters(),
            seed,
        }
    }

    /// Two categorical dimensions with 51 values and four continuous ones
    /// with 56, 100, 802 and 212 distinct values.
    pub fn hydro_like(records: usize, distribution: Distribution, seed: u64) -> Self {
        GeneratorConfig {
            categorical: vec![51, 51],
            continuous: vec![56, 100, 802, 212],
            records,
            measures: 1,
            distribution,
            clusters: default_clusters(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.categorical.len() + self.continuous.len();
        if dims == 0 {
            return Err(Error::InvalidConfig("need at least one dimension".into()));
        }
        if self.categorical.iter().chain(&self.continuous).any(|&c| c == 0) {
            return Err(Error::InvalidConfig(
                "cardinalities and distinct counts must be positive".into(),
            ));
        }
        if self.clusters == 0 {
            return Err(Error::InvalidConfig("need at least one cluster".into()));
        }
        Ok(())
    }

    /// Categorical dimensions `c0, c1, ...`, continuous `x0, x1, ...`,
    /// measures `m0, m1, ...`.
    pub fn schema(&self) -> Result<Schema> {
        self.validate()?;
        let dims = self
            .categorical
            .iter()
            .enumerate()
            .map(|(i, &c)| DimensionSpec::categorical(format!("c{i}"), c))
            .chain((0..self.continuous.len()).map(|i| DimensionSpec::continuous(format!("x{i}"), 0.0, CONTINUOUS_HI)))
            .collect();
        Schema::new(dims, (0..self.measures).map(|i| format!("m{i}")).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<Record>,
}

/// Column of `n` value indices in `0..distinct`. When `n >= distinct` every
/// index occurs at least once: that many randomly chosen rows are overwritten
/// with one index each.
fn column(
    n: usize,
    distinct: usize,
    centers: &[f64],
    membership: &[usize],
    dist: Distribution,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let spread = Normal::new(0.0, 0.04 * distinct as f64).expect("positive spread");
    let mut col: Vec<usize> = (0..n)
        .map(|i| match dist {
            Distribution::Uniform => rng.random_range(0..distinct),
            Distribution::Clustered => {
                let c = centers[membership[i]] * distinct as f64 + spread.sample(rng);
                c.clamp(0.0, distinct as f64 - 1.0) as usize
            }
        })
        .collect();
    let covered = n.min(distinct);
    for (v, row) in index::sample(rng, n, covered).into_iter().enumerate() {
        col[row] = v;
    }
    col
}

/// Distinct values for one continuous dimension. Clustered datasets draw
/// them around a few centers, so neighbours can be very close.
fn value_set(distinct: usize, dist: Distribution, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::with_capacity(distinct);
    let mut seen = std::collections::HashSet::with_capacity(distinct);
    let centers: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..0.9)).collect();
    let narrow = Normal::new(0.0, 0.01).expect("positive spread");
    while values.len() < distinct {
        let x = match dist {
            Distribution::Uniform => rng.random::<f64>(),
            Distribution::Clustered => {
                (centers[rng.random_range(0..centers.len())] + narrow.sample(rng)).clamp(0.0, 1.0)
            }
        };
        let v = x * CONTINUOUS_HI;
        if seen.insert(v.to_bits()) {
            values.push(v);
        }
    }
    values.sort_by(f64::total_cmp);
    values
}

pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.records;
    let membership: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.clusters)).collect();

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(schema.dims());
    for &card in &config.categorical {
        let centers: Vec<f64> = (0..config.clusters).map(|_| rng.random()).collect();
        let idx = column(n, card as usize, &centers, &membership, config.distribution, &mut rng);
        columns.push(idx.into_iter().map(|i| i as f64).collect());
    }
    for &distinct in &config.continuous {
        let values = value_set(distinct as usize, config.distribution, &mut rng);
        let centers: Vec<f64> = (0..config.clusters).map(|_| rng.random()).collect();
        let idx = column(
            n,
            distinct as usize,
            &centers,
            &membership,
            config.distribution,
            &mut rng,
        );
        columns.push(idx.into_iter().map(|i| values[i]).collect());
    }

    let records = (0..n)
        .map(|i| {
            let coords = columns.iter().map(|c| c[i]).collect();
            let measures = (0..config.measures)
                .map(|_| (rng.random_range(0.0..1000.0f64) * 100.0).round() / 100.0)
                .collect();
            Record::new(coords, measures)
        })
        .collect();
    Ok(Dataset { schema, records })
}

/// An update batch of `size` records: a fraction `overlap` of them reuse the
/// coordinates of randomly chosen `existing` records with fresh measures, the
/// rest are new points drawn uniformly from the schema's domain.
pub fn update_batch<R: Rng>(
    existing: &[Record],
    schema: &Schema,
    size: usize,
    overlap: f64,
    rng: &mut R,
) -> Vec<Record> {
    let shared = if existing.is_empty() {
        0
    } else {
        ((size as f64 * overlap.clamp(0.0, 1.0)).round() as usize).min(existing.len())
    };
    let fresh_measures = |rng: &mut R| {
        (0..schema.measure_count())
            .map(|_| rng.random_range(0.0..1000.0f64))
            .collect::<Vec<_>>()
    };
    let picks = index::sample(rng, existing.len(), shared).into_vec();
    let mut out: Vec<Record> = picks
        .into_iter()
        .map(|i| Record::new(existing[i].coords.clone(), fresh_measures(rng)))
        .collect();
    while out.len() < size {
        let coords = schema
            .dimensions()
            .iter()
            .map(|d| match d.kind {
                DimensionKind::Categorical { cardinality } => f64::from(rng.random_range(0..cardinality)),
                DimensionKind::Continuous { lo, hi } => rng.random_range(lo..=hi),
            })
            .collect();
        out.push(Record::new(coords, fresh_measures(rng)));
    }
    out.shuffle(rng);
    out
}

/// Random query boxes. Each dimension is constrained with probability
/// `constrain`; a constrained interval has uniformly random endpoints.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    pub constrain: f64,
}

impl Default for RegionSampler {
    fn default() -> Self {
        RegionSampler { constrain: 0.5 }
    }
}

impl RegionSampler {
    pub fn sample<R: Rng>(&self, schema: &Schema, rng: &mut R) -> QueryRegion {
        let mut region = QueryRegion::unconstrained(schema.dims());
        for (i, d) in schema.dimensions().iter().enumerate() {
            if !rng.random_bool(self.constrain) {
                continue;
            }
            let (a, b) = match d.kind {
                DimensionKind::Categorical { cardinality } => (
                    f64::from(rng.random_range(0..cardinality)),
                    f64::from(rng.random_range(0..cardinality)),
                ),
                DimensionKind::Continuous { lo, hi } => (rng.random_range(lo..=hi), rng.random_range(lo..=hi)),
            };
            region = region.with(i, a.min(b), a.max(b));
        }
        region
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn distinct_counts(ds: &Dataset) -> Vec<usize> {
        (0..ds.schema.dims())
            .map(|d| {
                ds.records
                    .iter()
                    .map(|r| r.coords[d].to_bits())
                    .collect::<HashSet<_>>()
                    .len()
            })
            .collect()
    }

    #[test]
    fn hydro_like_distinct_counts() {
        for dist in [Distribution::Uniform, Distribution::Clustered] {
            let ds = generate(&GeneratorConfig::hydro_like(5000, dist, 7)).unwrap();
            assert_eq!(distinct_counts(&ds), vec![51, 51, 56, 100, 802, 212]);
            for r in &ds.records {
                r.validate(&ds.schema).unwrap();
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = GeneratorConfig::synthetic(2, 2, 300, Distribution::Clustered, 1);
        assert_eq!(generate(&cfg).unwrap().records, generate(&cfg).unwrap().records);
        let other = GeneratorConfig { seed: 2, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().records, generate(&other).unwrap().records);
    }

    #[test]
    fn empty_and_invalid_configs() {
        let cfg = GeneratorConfig::synthetic(1, 1, 0, Distribution::Uniform, 1);
        assert!(generate(&cfg).unwrap().records.is_empty());
        assert!(generate(&GeneratorConfig::synthetic(0, 0, 10, Distribution::Uniform, 1)).is_err());
        let zero = GeneratorConfig {
            continuous: vec![0],
            ..cfg
        };
        assert!(generate(&zero).is_err());
    }

    #[test]
    fn update_batches_share_the_requested_keys() {
        let ds = generate(&GeneratorConfig::synthetic(1, 2, 1000, Distribution::Uniform, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = update_batch(&ds.records, &ds.schema, 40, 0.5, &mut rng);
        assert_eq!(batch.len(), 40);
        let shared = batch
            .iter()
            .filter(|b| ds.records.iter().any(|r| r.same_coords(b)))
            .count();
        assert_eq!(shared, 20);
        for r in &batch {
            r.validate(&ds.schema).unwrap();
        }
    }

    #[test]
    fn sampled_regions_are_valid() {
        let schema = GeneratorConfig::hydro_like(0, Distribution::Uniform, 0)
            .schema()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            RegionSampler::default()
                .sample(&schema, &mut rng)
                .validate(&schema)
                .unwrap();
        }
    }
}
