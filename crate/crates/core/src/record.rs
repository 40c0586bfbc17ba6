use crate::error::{Error, Result};
use crate::hilbert::RankCache;
use crate::schema::Schema;

/// One fact row. Categorical coordinates are integral ids stored as `f64`,
/// continuous coordinates are raw values in original units.
#[derive(Debug, Clone, Default)]
pub struct Record {
    pub coords: Vec<f64>,
    pub measures: Vec<f64>,
    /// Last computed Hilbert rank, memoized by the comparator.
    pub cached_rank: Option<RankCache>,
}

impl Record {
    pub fn new(coords: Vec<f64>, measures: Vec<f64>) -> Self {
        Record {
            coords,
            measures,
            cached_rank: None,
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.coords.len() != schema.dims() {
            return Err(Error::InvalidRecord(format!(
                "expected {} coordinates, got {}",
                schema.dims(),
                self.coords.len()
            )));
        }
        if self.measures.len() != schema.measure_count() {
            return Err(Error::InvalidRecord(format!(
                "expected {} measures, got {}",
                schema.measure_count(),
                self.measures.len()
            )));
        }
        for (spec, &v) in schema.dimensions().iter().zip(&self.coords) {
            if !spec.contains(v) {
                return Err(Error::DomainViolation {
                    dimension: spec.name.clone(),
                    value: v,
                });
            }
        }
        if let Some(m) = self.measures.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "measure `{}` is not finite",
                schema.measures()[m]
            )));
        }
        Ok(())
    }

    /// Same dimension coordinates, bit for bit. Measures are ignored.
    pub fn same_coords(&self, other: &Record) -> bool {
        self.coords.len() == other.coords.len()
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Equality on stored content; the rank cache is derived state and ignored.
impl PartialEq for Record {
    fn eq(&self, other: &Self) -> bool {
        self.coords == other.coords && self.measures == other.measures
    }
}
