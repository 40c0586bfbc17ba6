//! Fixtures shared by the criterion benches.

use std::path::Path;

use gcube_core::view::{build_view, BuildOptions, View};
use gcube_core::{generate, Dataset, Dictionaries, Distribution, GeneratorConfig};

/// Hydro-like dataset: two categorical and four continuous dimensions.
pub fn hydro(records: usize, distribution: Distribution, seed: u64) -> Dataset {
    generate(&GeneratorConfig::hydro_like(records, distribution, seed)).expect("valid generator config")
}

/// Builds a view of `ds` in `dir` with default options and opens it.
pub fn view_of(ds: &Dataset, dir: &Path) -> View {
    build_view(
        dir,
        &ds.schema,
        &Dictionaries::new(&ds.schema),
        ds.records.clone(),
        BuildOptions::default(),
    )
    .expect("build view");
    View::open(dir).expect("open view")
}
