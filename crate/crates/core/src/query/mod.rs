//! Range queries over an indexed view.
//!
//! The tree is walked breadth-first from the root with an explicit frontier.
//! A node whose box misses the region is dropped, a node whose box lies
//! inside the region contributes its stored aggregate without being opened,
//! and a partially overlapping node is expanded. Partially overlapping
//! level-0 nodes name the only blocks that are read, and they are read in
//! ascending block order after the walk.

mod document;
pub mod oracle;
mod region;

use std::collections::VecDeque;

pub use document::{
    execute_document, AggregateSpec, Coordinate, QueryDocument, QueryResponse, RegionPredicate, MAX_SUBQUERIES,
};
pub use region::{AggregateFn, AggregateRequest, AggregateValue, BoxRelation, QueryRegion, QueryResult, QueryStats};

use crate::block_store::BlockFile;
use crate::error::{Error, Result};
use crate::index_tree::{IndexTree, NodeAggregate, NodeChildren};
use crate::record::Record;
use crate::schema::Schema;

/// Running distributive state for one measure (or just the count).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Partial {
    pub count: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

impl Partial {
    pub(crate) const EMPTY: Partial = Partial {
        count: 0,
        sum: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    fn add_node(&mut self, agg: &NodeAggregate, measure: Option<usize>) {
        self.count += agg.count;
        if let Some(m) = measure {
            let s = agg.measures[m];
            self.sum += s.sum;
            self.min = self.min.min(s.min);
            self.max = self.max.max(s.max);
        }
    }

    fn add_record(&mut self, r: &Record, measure: Option<usize>) {
        self.count += 1;
        if let Some(m) = measure {
            let v = r.measures[m];
            self.sum += v;
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    pub(crate) fn merge(&mut self, o: &Partial) {
        self.count += o.count;
        self.sum += o.sum;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    pub(crate) fn finish(&self, f: AggregateFn) -> Option<AggregateValue> {
        let real = |x| (self.count > 0).then_some(AggregateValue::Real(x));
        match f {
            AggregateFn::Count => Some(AggregateValue::Integer(self.count)),
            AggregateFn::Sum => Some(AggregateValue::Real(self.sum)),
            AggregateFn::Avg => real(self.sum / self.count as f64),
            AggregateFn::Min => real(self.min),
            AggregateFn::Max => real(self.max),
            AggregateFn::Median => None,
        }
    }
}

#[derive(Debug, Default)]
struct Plan {
    /// Nodes entirely inside the region, in visiting order.
    inside: Vec<usize>,
    /// Level-0 blocks that straddle the region boundary.
    partial_blocks: Vec<u64>,
    visited: u64,
}

fn plan(index: &IndexTree, region: &QueryRegion) -> Plan {
    let mut plan = Plan::default();
    if index.is_empty() {
        return plan;
    }
    let mut frontier = VecDeque::from([0usize]);
    while let Some(id) = frontier.pop_front() {
        plan.visited += 1;
        let node = index.node(id);
        match region.relate(&node.bbox) {
            BoxRelation::Disjoint => {}
            BoxRelation::Inside => plan.inside.push(id),
            BoxRelation::Partial => match node.children {
                NodeChildren::Nodes { .. } => frontier.extend(node.child_ids()),
                NodeChildren::Block { block, .. } => plan.partial_blocks.push(block),
            },
        }
    }
    // Level-0 nodes leave a breadth-first frontier in block order.
    debug_assert!(plan.partial_blocks.windows(2).all(|w| w[0] < w[1]));
    plan
}

fn check_inputs(index: &IndexTree, blocks: &BlockFile, schema: &Schema, region: &QueryRegion) -> Result<()> {
    region.validate(schema)?;
    if index.header().schema_digest != schema.digest() {
        return Err(Error::StaleIndex("index was built for a different schema".into()));
    }
    index.check_matches(blocks)
}

pub(crate) fn collect_partial(
    index: &IndexTree,
    blocks: &BlockFile,
    region: &QueryRegion,
    measure: Option<usize>,
) -> Result<(Partial, QueryStats)> {
    let plan = plan(index, region);
    let mut acc = Partial::EMPTY;
    for &id in &plan.inside {
        acc.add_node(&index.node(id).aggregate, measure);
    }
    let mut stats = QueryStats {
        visited_nodes: plan.visited,
        ..Default::default()
    };
    for &b in &plan.partial_blocks {
        stats.blocks_read += 1;
        stats.block_sequence.push(b);
        for r in blocks.read_block(b)? {
            if region.contains(&r.coords) {
                acc.add_record(&r, measure);
            }
        }
    }
    Ok((acc, stats))
}

/// Answers a COUNT, SUM, AVG, MIN or MAX query from the index, reading only
/// blocks the region cuts through.
pub fn range_aggregate(
    index: &IndexTree,
    blocks: &BlockFile,
    schema: &Schema,
    region: &QueryRegion,
    request: &AggregateRequest,
) -> Result<QueryResult> {
    if request.function.is_holistic() {
        return Err(Error::HolisticAggregate);
    }
    let measure = request.measure_index(schema)?;
    check_inputs(index, blocks, schema, region)?;
    let (acc, stats) = collect_partial(index, blocks, region, measure)?;
    Ok(QueryResult {
        value: acc.finish(request.function),
        empty: acc.count == 0,
        stats,
    })
}

/// Streams the records inside a region in Hilbert order.
#[derive(Debug)]
pub struct RangeScan<'a> {
    blocks: &'a BlockFile,
    region: QueryRegion,
    /// (block, wholly inside) in ascending block order
    work: std::vec::IntoIter<(u64, bool)>,
    current: std::vec::IntoIter<Record>,
    filter_current: bool,
    stats: QueryStats,
}

impl RangeScan<'_> {
    /// Instrumentation so far; complete once the stream is exhausted.
    pub fn stats(&self) -> &QueryStats {
        &self.stats
    }
}

impl Iterator for RangeScan<'_> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            for r in self.current.by_ref() {
                if !self.filter_current || self.region.contains(&r.coords) {
                    return Some(Ok(r));
                }
            }
            let (block, full) = self.work.next()?;
            self.stats.blocks_read += 1;
            self.stats.block_sequence.push(block);
            match self.blocks.read_block(block) {
                Ok(records) => {
                    self.current = records.into_iter();
                    self.filter_current = !full;
                }
                Err(e) => {
                    self.work = Vec::new().into_iter();
                    return Some(Err(e));
                }
            }
        }
    }
}

pub fn range_retrieve<'a>(
    index: &IndexTree,
    blocks: &'a BlockFile,
    schema: &Schema,
    region: &QueryRegion,
) -> Result<RangeScan<'a>> {
    check_inputs(index, blocks, schema, region)?;
    let plan = plan(index, region);
    let mut work: Vec<(u64, bool)> = plan
        .inside
        .iter()
        .flat_map(|&id| index.node(id).blocks.clone().map(|b| (b, true)))
        .chain(plan.partial_blocks.iter().map(|&b| (b, false)))
        .collect();
    work.sort_unstable_by_key(|&(b, _)| b);
    Ok(RangeScan {
        blocks,
        region: region.clone(),
        work: work.into_iter(),
        current: Vec::new().into_iter(),
        filter_current: false,
        stats: QueryStats {
            visited_nodes: plan.visited,
            ..Default::default()
        },
    })
}

/// Median of `values`; the mean of the two middle values for even counts.
pub(crate) fn median_of(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// MEDIAN over a region. Holistic, so the matching records are retrieved.
pub fn range_median(
    index: &IndexTree,
    blocks: &BlockFile,
    schema: &Schema,
    region: &QueryRegion,
    measure: &str,
) -> Result<QueryResult> {
    let m = schema
        .measure_index(measure)
        .ok_or_else(|| Error::UnknownMeasure(measure.to_owned()))?;
    let mut scan = range_retrieve(index, blocks, schema, region)?;
    let mut values = Vec::new();
    for r in scan.by_ref() {
        values.push(r?.measures[m]);
    }
    let value = median_of(&mut values).map(AggregateValue::Real);
    Ok(QueryResult {
        empty: values.is_empty(),
        value,
        stats: scan.stats().clone(),
    })
}

/// Dispatches to [`range_aggregate`] or [`range_median`].
pub fn answer(
    index: &IndexTree,
    blocks: &BlockFile,
    schema: &Schema,
    region: &QueryRegion,
    request: &AggregateRequest,
) -> Result<QueryResult> {
    match (request.function, &request.measure) {
        (AggregateFn::Median, Some(m)) => range_median(index, blocks, schema, region, m),
        (AggregateFn::Median, None) => Err(Error::InvalidQuery("MEDIAN needs a measure".into())),
        _ => range_aggregate(index, blocks, schema, region, request),
    }
}
