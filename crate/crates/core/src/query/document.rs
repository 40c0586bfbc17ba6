//! JSON query documents.
//!
//! ```json
//! {"region": {"station": {"in": ["north", "east"]}, "depth": [0, 12.5]},
//!  "aggregate": {"fn": "SUM", "measure": "flow"}}
//! ```
//!
//! A set predicate is split into one interval per run of consecutive ids and
//! the query is evaluated once per combination. The subregions are disjoint,
//! so their partial results combine by addition and min/max.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    check_inputs, collect_partial, median_of, range_retrieve, AggregateFn, AggregateRequest, AggregateValue, Partial,
    QueryRegion, QueryStats,
};
use crate::block_store::BlockFile;
use crate::error::{Error, Result};
use crate::index_tree::IndexTree;
use crate::schema::Schema;

/// Upper limit on the number of subregions a set predicate may expand to.
pub const MAX_SUBQUERIES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coordinate {
    Number(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionPredicate {
    Interval([Coordinate; 2]),
    Set {
        #[serde(rename = "in")]
        values: Vec<Coordinate>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSpec {
    #[serde(rename = "fn")]
    pub function: AggregateFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDocument {
    #[serde(default)]
    pub region: BTreeMap<String, RegionPredicate>,
    pub aggregate: AggregateSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub query: QueryDocument,
    pub value: Option<AggregateValue>,
    pub empty: bool,
    pub visited_nodes: u64,
    pub blocks_read: u64,
    pub subqueries: usize,
}

impl QueryDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn request(&self) -> AggregateRequest {
        AggregateRequest {
            function: self.aggregate.function,
            measure: self.aggregate.measure.clone(),
        }
    }

    /// Disjoint regions whose union is the document's region. `labels` maps
    /// (dimension, label) to a categorical id.
    pub fn regions(&self, schema: &Schema, labels: &dyn Fn(&str, &str) -> Option<u32>) -> Result<Vec<QueryRegion>> {
        let mut alternatives: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None]; schema.dims()];
        for (name, pred) in &self.region {
            let dim = schema
                .dimension_index(name)
                .ok_or_else(|| Error::UnknownDimension(name.clone()))?;
            let categorical = schema.dimensions()[dim].is_categorical();
            let resolve = |c: &Coordinate| -> Result<f64> {
                match c {
                    Coordinate::Number(x) => Ok(*x),
                    Coordinate::Label(l) if categorical => labels(name, l)
                        .map(f64::from)
                        .ok_or_else(|| Error::InvalidQuery(format!("unknown label `{l}` for `{name}`"))),
                    Coordinate::Label(l) => Err(Error::InvalidQuery(format!(
                        "label `{l}` given for continuous dimension `{name}`"
                    ))),
                }
            };
            alternatives[dim] = match pred {
                RegionPredicate::Interval([lo, hi]) => vec![Some((resolve(lo)?, resolve(hi)?))],
                RegionPredicate::Set { values } => {
                    let mut v = values.iter().map(resolve).collect::<Result<Vec<f64>>>()?;
                    if v.iter().any(|x| x.is_nan()) {
                        return Err(Error::InvalidQuery(format!("NaN in set for `{name}`")));
                    }
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    runs(&v, categorical)
                }
            };
        }

        let total = alternatives.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
        match total {
            Some(n) if n <= MAX_SUBQUERIES => {}
            _ => {
                return Err(Error::InvalidQuery(format!(
                    "set predicates expand to more than {MAX_SUBQUERIES} subqueries"
                )))
            }
        }
        let mut out = vec![Vec::with_capacity(schema.dims())];
        for alts in &alternatives {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    alts.iter().map(move |iv| {
                        let mut p = prefix.clone();
                        p.push(*iv);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(|iv| QueryRegion::new(iv, schema)).collect()
    }
}

/// Point intervals, with consecutive categorical ids joined into one interval.
fn runs(sorted: &[f64], categorical: bool) -> Vec<Option<(f64, f64)>> {
    let mut out: Vec<Option<(f64, f64)>> = Vec::new();
    for &x in sorted {
        match out.last_mut() {
            Some(Some((_, hi))) if categorical && x == *hi + 1.0 => *hi = x,
            _ => out.push(Some((x, x))),
        }
    }
    out
}

pub fn execute_document(
    doc: &QueryDocument,
    index: &IndexTree,
    blocks: &BlockFile,
    schema: &Schema,
    labels: &dyn Fn(&str, &str) -> Option<u32>,
) -> Result<QueryResponse> {
    let request = doc.request();
    let measure = request.measure_index(schema)?;
    let regions = doc.regions(schema, labels)?;
    let mut stats = QueryStats::default();
    let (value, count) = if request.function == AggregateFn::Median {
        let m = measure.expect("MEDIAN has a measure");
        let mut values = Vec::new();
        for region in &regions {
            let mut scan = range_retrieve(index, blocks, schema, region)?;
            for r in scan.by_ref() {
                values.push(r?.measures[m]);
            }
            stats.absorb(scan.stats());
        }
        let n = values.len() as u64;
        (median_of(&mut values).map(AggregateValue::Real), n)
    } else {
        let mut acc = Partial::EMPTY;
        for region in &regions {
            check_inputs(index, blocks, schema, region)?;
            let (p, s) = collect_partial(index, blocks, region, measure)?;
            acc.merge(&p);
            stats.absorb(&s);
        }
        (acc.finish(request.function), acc.count)
    };
    Ok(QueryResponse {
        query: doc.clone(),
        value,
        empty: count == 0,
        visited_nodes: stats.visited_nodes,
        blocks_read: stats.blocks_read,
        subqueries: regions.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::DimensionSpec;

    fn schema() -> Schema {
        Schema::new(
            vec![
                DimensionSpec::categorical("site", 10),
                DimensionSpec::continuous("depth", 0.0, 100.0),
            ],
            vec!["flow".into()],
        )
        .unwrap()
    }

    fn no_labels(_: &str, _: &str) -> Option<u32> {
        None
    }

    #[test]
    fn parses_intervals_and_sets() {
        let doc = QueryDocument::from_json(
            r#"{"region": {"site": {"in": [2, 5, 3, "n"]}, "depth": [0, 12.5]},
                "aggregate": {"fn": "sum", "measure": "flow"}}"#,
        )
        .unwrap();
        assert_eq!(doc.aggregate.function, AggregateFn::Sum);
        let labels = |d: &str, l: &str| (d == "site" && l == "n").then_some(9);
        let regions = doc.regions(&schema(), &labels).unwrap();
        let got: Vec<_> = regions.iter().map(|r| r.intervals().to_vec()).collect();
        assert_eq!(
            got,
            vec![
                vec![Some((2.0, 3.0)), Some((0.0, 12.5))],
                vec![Some((5.0, 5.0)), Some((0.0, 12.5))],
                vec![Some((9.0, 9.0)), Some((0.0, 12.5))],
            ]
        );
        assert!(doc.regions(&schema(), &no_labels).is_err());
    }

    #[test]
    fn rejects_bad_documents() {
        let s = schema();
        let unknown = QueryDocument::from_json(r#"{"region": {"zz": [0, 1]}, "aggregate": {"fn": "COUNT"}}"#).unwrap();
        assert!(matches!(
            unknown.regions(&s, &no_labels),
            Err(Error::UnknownDimension(_))
        ));
        assert!(QueryDocument::from_json(r#"{"aggregate": {"fn": "MODE"}}"#).is_err());
        let label_on_continuous =
            QueryDocument::from_json(r#"{"region": {"depth": ["a", 1]}, "aggregate": {"fn": "COUNT"}}"#).unwrap();
        assert!(label_on_continuous.regions(&s, &no_labels).is_err());
        let all = QueryDocument::from_json(r#"{"aggregate": {"fn": "COUNT"}}"#).unwrap();
        assert_eq!(
            all.regions(&s, &no_labels).unwrap(),
            vec![QueryRegion::unconstrained(2)]
        );
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"{"region":{"site":{"in":[1.0,2.0]}},"aggregate":{"fn":"MEDIAN","measure":"flow"}}"#;
        let doc = QueryDocument::from_json(text).unwrap();
        assert_eq!(serde_json::to_string(&doc).unwrap(), text);
    }
}
