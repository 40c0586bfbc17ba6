//! View schemas: which dimensions a view has, how each one is embedded on the
//! grid, and which measures every record carries.
//!
//! The on-disk form is a small JSON document:
//!
//! ```json
//! {
//!   "dimensions": [
//!     {"name": "region", "kind": "categorical", "cardinality": 51},
//!     {"name": "elevation", "kind": "continuous", "lo": 0.0, "hi": 4000.0}
//!   ],
//!   "measures": ["flow", "area"]
//! }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper bound on the number of dimensions; one Hilbert digit holds one bit
/// per dimension and digits are stored as `u32`.
pub const MAX_DIMENSIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionKind {
    Categorical { cardinality: u32 },
    Continuous { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSpec {
    pub name: String,
    pub kind: DimensionKind,
}

impl DimensionSpec {
    pub fn categorical(name: impl Into<String>, cardinality: u32) -> Self {
        DimensionSpec {
            name: name.into(),
            kind: DimensionKind::Categorical { cardinality },
        }
    }

    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        DimensionSpec {
            name: name.into(),
            kind: DimensionKind::Continuous { lo, hi },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, DimensionKind::Categorical { .. })
    }

    /// Closed value domain of the dimension in original coordinates.
    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            DimensionKind::Categorical { cardinality } => (0.0, f64::from(cardinality - 1)),
            DimensionKind::Continuous { lo, hi } => (lo, hi),
        }
    }

    /// Whether `value` is a legal coordinate for this dimension.
    pub fn contains(&self, value: f64) -> bool {
        match self.kind {
            DimensionKind::Categorical { cardinality } => {
                value >= 0.0 && value.fract() == 0.0 && value < f64::from(cardinality)
            }
            DimensionKind::Continuous { lo, hi } => value >= lo && value <= hi,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("dimension with empty name".into()));
        }
        match self.kind {
            DimensionKind::Categorical { cardinality: 0 } => Err(Error::Schema(format!(
                "categorical dimension `{}` has cardinality 0",
                self.name
            ))),
            DimensionKind::Continuous { lo, hi } if !(lo.is_finite() && hi.is_finite()) => Err(Error::Schema(format!(
                "continuous dimension `{}` has non-finite bounds",
                self.name
            ))),
            DimensionKind::Continuous { lo, hi } if hi <= lo => Err(Error::Schema(format!(
                "continuous dimension `{}` needs lo < hi (got lo={lo}, hi={hi})",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    dimensions: Vec<DimensionSpec>,
    measures: Vec<String>,
}

impl Schema {
    pub fn new(dimensions: Vec<DimensionSpec>, measures: Vec<String>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Schema("a view needs at least one dimension".into()));
        }
        if dimensions.len() > MAX_DIMENSIONS {
            return Err(Error::Schema(format!(
                "{} dimensions exceed the supported maximum of {MAX_DIMENSIONS}",
                dimensions.len()
            )));
        }
        let mut seen = HashSet::new();
        for dim in &dimensions {
            dim.validate()?;
            if !seen.insert(dim.name.as_str()) {
                return Err(Error::Schema(format!("duplicate name `{}`", dim.name)));
            }
        }
        for m in &measures {
            if m.is_empty() {
                return Err(Error::Schema("measure with empty name".into()));
            }
            if !seen.insert(m.as_str()) {
                return Err(Error::Schema(format!("duplicate name `{m}`")));
            }
        }
        Ok(Schema { dimensions, measures })
    }

    pub fn dimensions(&self) -> &[DimensionSpec] {
        &self.dimensions
    }

    pub fn measures(&self) -> &[String] {
        &self.measures
    }

    pub fn dims(&self) -> usize {
        self.dimensions.len()
    }

    pub fn measure_count(&self) -> usize {
        self.measures.len()
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.measures.iter().position(|m| m == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSchema = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RawSchema::from(self)).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    /// SHA-256 over the compact canonical JSON form. Two schemas with the same
    /// dimensions, kinds, bounds and measures in the same order share a digest.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(&RawSchema::from(self)).expect("schema serializes");
        Sha256::digest(&canonical).into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    dimensions: Vec<RawDimension>,
    #[serde(default)]
    measures: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDimension {
    name: String,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Categorical,
    Continuous,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        let dimensions = raw
            .dimensions
            .into_iter()
            .map(|d| {
                let kind = match (d.kind, d.cardinality, d.lo, d.hi) {
                    (RawKind::Categorical, Some(cardinality), None, None) => DimensionKind::Categorical { cardinality },
                    (RawKind::Continuous, None, Some(lo), Some(hi)) => DimensionKind::Continuous { lo, hi },
                    (RawKind::Categorical, ..) => {
                        return Err(Error::Schema(format!(
                            "categorical dimension `{}` needs `cardinality` and no bounds",
                            d.name
                        )))
                    }
                    (RawKind::Continuous, ..) => {
                        return Err(Error::Schema(format!(
                            "continuous dimension `{}` needs `lo` and `hi` and no cardinality",
                            d.name
                        )))
                    }
                };
                Ok(DimensionSpec { name: d.name, kind })
            })
            .collect::<Result<Vec<_>>>()?;
        Schema::new(dimensions, raw.measures)
    }
}

impl From<&Schema> for RawSchema {
    fn from(schema: &Schema) -> Self {
        RawSchema {
            dimensions: schema
                .dimensions
                .iter()
                .map(|d| match d.kind {
                    DimensionKind::Categorical { cardinality } => RawDimension {
                        name: d.name.clone(),
                        kind: RawKind::Categorical,
                        cardinality: Some(cardinality),
                        lo: None,
                        hi: None,
                    },
                    DimensionKind::Continuous { lo, hi } => RawDimension {
                        name: d.name.clone(),
                        kind: RawKind::Continuous,
                        cardinality: None,
                        lo: Some(lo),
                        hi: Some(hi),
                    },
                })
                .collect(),
            measures: schema.measures.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "dimensions": [
            {"name": "basin", "kind": "categorical", "cardinality": 51},
            {"name": "elev", "kind": "continuous", "lo": 0, "hi": 10}
        ],
        "measures": ["flow"]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let schema = Schema::from_json(SAMPLE).unwrap();
        assert_eq!(schema.dims(), 2);
        assert_eq!(
            schema.dimensions()[0].kind,
            DimensionKind::Categorical { cardinality: 51 }
        );
        assert_eq!(schema.measure_index("flow"), Some(0));
        let again = Schema::from_json(&schema.to_json()).unwrap();
        assert_eq!(again, schema);
        assert_eq!(again.digest(), schema.digest());
    }

    #[test]
    fn rejects_zero_width_domain() {
        let text = r#"{"dimensions":[{"name":"x","kind":"continuous","lo":1,"hi":1}],"measures":[]}"#;
        assert!(matches!(Schema::from_json(text), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_mixed_fields() {
        let text = r#"{"dimensions":[{"name":"x","kind":"categorical","cardinality":3,"lo":0,"hi":1}]}"#;
        assert!(Schema::from_json(text).is_err());
        let text = r#"{"dimensions":[{"name":"x","kind":"continuous","lo":0}]}"#;
        assert!(Schema::from_json(text).is_err());
    }

    #[test]
    fn rejects_duplicate_names_and_empty_views() {
        let dup = vec![DimensionSpec::categorical("a", 2), DimensionSpec::categorical("a", 3)];
        assert!(Schema::new(dup, vec![]).is_err());
        let clash = vec![DimensionSpec::categorical("a", 2)];
        assert!(Schema::new(clash, vec!["a".into()]).is_err());
        assert!(Schema::new(vec![], vec![]).is_err());
        assert!(Schema::new(vec![DimensionSpec::categorical("a", 0)], vec![]).is_err());
    }

    #[test]
    fn digest_depends_on_dimension_order() {
        let a = Schema::new(
            vec![
                DimensionSpec::categorical("a", 2),
                DimensionSpec::continuous("b", 0.0, 1.0),
            ],
            vec![],
        )
        .unwrap();
        let b = Schema::new(
            vec![
                DimensionSpec::continuous("b", 0.0, 1.0),
                DimensionSpec::categorical("a", 2),
            ],
            vec![],
        )
        .unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn categorical_membership_requires_integral_ids() {
        let d = DimensionSpec::categorical("c", 4);
        assert!(d.contains(3.0));
        assert!(!d.contains(4.0));
        assert!(!d.contains(1.5));
        assert!(!d.contains(-1.0));
    }
}
