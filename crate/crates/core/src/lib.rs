//! Hilbert-ordered data cubes with adaptive grid resolution.
//!
//! Records are sorted along a Hilbert curve whose resolution grows only when
//! two records would otherwise share a cell, written sequentially into
//! fixed-size blocks, and indexed by a tree whose nodes carry bounding boxes
//! and pre-computed aggregates. Updates are merged into a view in one pass.

pub mod baseline;
pub mod block_store;
pub mod error;
pub mod grid;
pub mod hilbert;
pub mod index_tree;
pub mod ingest;
pub mod merge;
pub mod query;
pub mod record;
pub mod schema;
pub mod synth;
pub mod view;

pub use baseline::{prediscretize_sort, required_static_resolution};
pub use block_store::{block_stats, write_sorted, BlockFile, BlockStats};
pub use error::{Error, Result};
pub use grid::{cell_coords, initial_resolution, GridKey, MAX_RESOLUTION};
pub use hilbert::{
    hilbert_compare, hilbert_rank, hilbert_sort, hilbert_sort_with, HilbertComparator, HilbertRank, SortOptions,
};
pub use index_tree::{build_index, load_index, open_index, save_index, BoundingBox, IndexTree, NodeAggregate};
pub use ingest::{Dictionaries, Rejection};
pub use merge::{hilbert_merge, MergeStats, UpdateBatch};
pub use query::oracle::brute_force_aggregate;
pub use query::{
    range_aggregate, range_median, range_retrieve, AggregateFn, AggregateRequest, AggregateValue, QueryDocument,
    QueryRegion, QueryResult,
};
pub use record::Record;
pub use schema::{DimensionKind, DimensionSpec, Schema};
pub use synth::{generate, Dataset, Distribution, GeneratorConfig, RegionSampler};
pub use view::{apply_update, build_view, build_view_from_csv, BuildOptions, View, ViewMeta};
