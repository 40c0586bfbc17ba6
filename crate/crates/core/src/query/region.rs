use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_tree::BoundingBox;
use crate::schema::Schema;

/// Hyper-rectangle in original coordinates. `None` leaves a dimension
/// unconstrained; intervals are closed on both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRegion {
    intervals: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxRelation {
    Disjoint,
    Inside,
    Partial,
}

impl QueryRegion {
    pub fn unconstrained(dims: usize) -> Self {
        QueryRegion {
            intervals: vec![None; dims],
        }
    }

    pub fn new(intervals: Vec<Option<(f64, f64)>>, schema: &Schema) -> Result<Self> {
        let region = QueryRegion { intervals };
        region.validate(schema)?;
        Ok(region)
    }

    /// Sets the interval of dimension `dim`.
    pub fn with(mut self, dim: usize, lo: f64, hi: f64) -> Self {
        self.intervals[dim] = Some((lo, hi));
        self
    }

    pub fn intervals(&self) -> &[Option<(f64, f64)>] {
        &self.intervals
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.intervals.len() != schema.dims() {
            return Err(Error::InvalidQuery(format!(
                "region has {} dimensions, schema has {}",
                self.intervals.len(),
                schema.dims()
            )));
        }
        for (spec, iv) in schema.dimensions().iter().zip(&self.intervals) {
            let Some((lo, hi)) = *iv else { continue };
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidQuery(format!(
                    "interval [{lo}, {hi}] on `{}` is empty or malformed",
                    spec.name
                )));
            }
            if spec.is_categorical() && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                return Err(Error::InvalidQuery(format!(
                    "categorical dimension `{}` needs integer interval endpoints",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(point)
            .all(|(iv, &v)| iv.is_none_or(|(lo, hi)| lo <= v && v <= hi))
    }

    pub fn relate(&self, bbox: &BoundingBox) -> BoxRelation {
        if bbox.is_empty() {
            return BoxRelation::Disjoint;
        }
        let mut inside = true;
        for (i, iv) in self.intervals.iter().enumerate() {
            let Some((lo, hi)) = *iv else { continue };
            if bbox.max[i] < lo || bbox.min[i] > hi {
                return BoxRelation::Disjoint;
            }
            if bbox.min[i] < lo || bbox.max[i] > hi {
                inside = false;
            }
        }
        if inside {
            BoxRelation::Inside
        } else {
            BoxRelation::Partial
        }
    }

    /// Whether `self` contains `other` (every constrained axis at least as wide).
    pub fn covers(&self, other: &QueryRegion) -> bool {
        self.intervals.iter().zip(&other.intervals).all(|(a, b)| match (a, b) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((alo, ahi)), Some((blo, bhi))) => alo <= blo && bhi <= ahi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggregateFn {
    Count,
    Sum,
    Avg,
    Min,
    Max,
    Median,
}

impl AggregateFn {
    pub const ALL: [AggregateFn; 6] = [
        AggregateFn::Count,
        AggregateFn::Sum,
        AggregateFn::Avg,
        AggregateFn::Min,
        AggregateFn::Max,
        AggregateFn::Median,
    ];

    pub fn is_holistic(self) -> bool {
        self == AggregateFn::Median
    }
}

impl fmt::Display for AggregateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregateFn::Count => "COUNT",
            AggregateFn::Sum => "SUM",
            AggregateFn::Avg => "AVG",
            AggregateFn::Min => "MIN",
            AggregateFn::Max => "MAX",
            AggregateFn::Median => "MEDIAN",
        })
    }
}

impl From<AggregateFn> for String {
    fn from(f: AggregateFn) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for AggregateFn {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for AggregateFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "COUNT" => Ok(AggregateFn::Count),
            "SUM" => Ok(AggregateFn::Sum),
            "AVG" | "AVERAGE" => Ok(AggregateFn::Avg),
            "MIN" => Ok(AggregateFn::Min),
            "MAX" => Ok(AggregateFn::Max),
            "MEDIAN" => Ok(AggregateFn::Median),
            other => Err(Error::InvalidQuery(format!("unknown aggregate function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateRequest {
    pub function: AggregateFn,
    pub measure: Option<String>,
}

impl AggregateRequest {
    pub fn count() -> Self {
        AggregateRequest {
            function: AggregateFn::Count,
            measure: None,
        }
    }

    pub fn of(function: AggregateFn, measure: impl Into<String>) -> Self {
        AggregateRequest {
            function,
            measure: Some(measure.into()),
        }
    }

    /// Index of the requested measure; `None` for COUNT.
    pub fn measure_index(&self, schema: &Schema) -> Result<Option<usize>> {
        match (&self.measure, self.function) {
            (_, AggregateFn::Count) => Ok(None),
            (None, f) => Err(Error::InvalidQuery(format!("{f} needs a measure"))),
            (Some(m), _) => schema
                .measure_index(m)
                .map(Some)
                .ok_or_else(|| Error::UnknownMeasure(m.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AggregateValue {
    Integer(u64),
    Real(f64),
}

impl AggregateValue {
    pub fn as_f64(self) -> f64 {
        match self {
            AggregateValue::Integer(n) => n as f64,
            AggregateValue::Real(x) => x,
        }
    }
}

/// Traversal instrumentation for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QueryStats {
    pub visited_nodes: u64,
    pub blocks_read: u64,
    /// Block ids in the order they were read.
    #[serde(skip)]
    pub block_sequence: Vec<u64>,
}

impl QueryStats {
    pub fn absorb(&mut self, other: &QueryStats) {
        self.visited_nodes += other.visited_nodes;
        self.blocks_read += other.blocks_read;
        self.block_sequence.extend_from_slice(&other.block_sequence);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// `None` when the function has no value over zero records.
    pub value: Option<AggregateValue>,
    /// Set exactly when no record matched.
    pub empty: bool,
    pub stats: QueryStats,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::DimensionSpec;

    fn schema() -> Schema {
        Schema::new(
            vec![
                DimensionSpec::categorical("c", 8),
                DimensionSpec::continuous("x", 0.0, 1.0),
            ],
            vec!["m".into()],
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        let s = schema();
        assert!(QueryRegion::new(vec![Some((1.0, 3.0)), None], &s).is_ok());
        assert!(QueryRegion::new(vec![Some((1.5, 3.0)), None], &s).is_err());
        assert!(QueryRegion::new(vec![None, Some((0.6, 0.5))], &s).is_err());
        assert!(QueryRegion::new(vec![None], &s).is_err());
    }

    #[test]
    fn relations() {
        let r = QueryRegion::unconstrained(2).with(1, 0.25, 0.5);
        let b = |lo: f64, hi: f64| BoundingBox {
            min: vec![0.0, lo],
            max: vec![7.0, hi],
        };
        assert_eq!(r.relate(&b(0.3, 0.4)), BoxRelation::Inside);
        assert_eq!(r.relate(&b(0.25, 0.5)), BoxRelation::Inside);
        assert_eq!(r.relate(&b(0.5, 0.9)), BoxRelation::Partial);
        assert_eq!(r.relate(&b(0.51, 0.9)), BoxRelation::Disjoint);
        assert_eq!(r.relate(&BoundingBox::empty(2)), BoxRelation::Disjoint);
        assert_eq!(QueryRegion::unconstrained(2).relate(&b(0.0, 1.0)), BoxRelation::Inside);
    }

    #[test]
    fn measure_resolution() {
        let s = schema();
        assert_eq!(AggregateRequest::count().measure_index(&s).unwrap(), None);
        assert_eq!(
            AggregateRequest::of(AggregateFn::Sum, "m").measure_index(&s).unwrap(),
            Some(0)
        );
        assert!(matches!(
            AggregateRequest::of(AggregateFn::Sum, "zz").measure_index(&s),
            Err(Error::UnknownMeasure(_))
        ));
        let no_measure = AggregateRequest {
            function: AggregateFn::Max,
            measure: None,
        };
        assert!(no_measure.measure_index(&s).is_err());
        assert_eq!("avg".parse::<AggregateFn>().unwrap(), AggregateFn::Avg);
    }
}
