//! Linear-scan reference answers. Shares only the record and region types
//! with the index-backed engine.

use super::{AggregateFn, AggregateRequest, AggregateValue, QueryRegion, QueryResult, QueryStats};
use crate::error::{Error, Result};
use crate::record::Record;
use crate::schema::Schema;

fn inside(region: &QueryRegion, r: &Record) -> bool {
    for (iv, &v) in region.intervals().iter().zip(&r.coords) {
        if let Some((lo, hi)) = *iv {
            if v < lo || v > hi {
                return false;
            }
        }
    }
    true
}

/// Answers `request` by scanning every record once.
pub fn brute_force_aggregate(
    records: &[Record],
    schema: &Schema,
    region: &QueryRegion,
    request: &AggregateRequest,
) -> Result<QueryResult> {
    region.validate(schema)?;
    let m = match (request.function, &request.measure) {
        (AggregateFn::Count, _) => None,
        (_, None) => return Err(Error::InvalidQuery(format!("{} needs a measure", request.function))),
        (_, Some(name)) => Some(
            schema
                .measure_index(name)
                .ok_or_else(|| Error::UnknownMeasure(name.clone()))?,
        ),
    };

    let mut n = 0u64;
    let mut sum = 0.0;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut kept = Vec::new();
    for r in records.iter().filter(|r| inside(region, r)) {
        n += 1;
        let Some(m) = m else { continue };
        let v = r.measures[m];
        sum += v;
        lo = Some(lo.map_or(v, |x| if v < x { v } else { x }));
        hi = Some(hi.map_or(v, |x| if v > x { v } else { x }));
        if request.function == AggregateFn::Median {
            kept.push(v);
        }
    }

    let value = match request.function {
        AggregateFn::Count => Some(AggregateValue::Integer(n)),
        AggregateFn::Sum => Some(AggregateValue::Real(sum)),
        AggregateFn::Avg => (n > 0).then(|| AggregateValue::Real(sum / n as f64)),
        AggregateFn::Min => lo.map(AggregateValue::Real),
        AggregateFn::Max => hi.map(AggregateValue::Real),
        AggregateFn::Median => {
            kept.sort_by(|a, b| a.partial_cmp(b).expect("finite measures"));
            let len = kept.len();
            match len {
                0 => None,
                _ if len % 2 == 1 => Some(AggregateValue::Real(kept[len / 2])),
                _ => Some(AggregateValue::Real(0.5 * (kept[len / 2 - 1] + kept[len / 2]))),
            }
        }
    };
    Ok(QueryResult {
        value,
        empty: n == 0,
        stats: QueryStats::default(),
    })
}
