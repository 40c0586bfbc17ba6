//! CSV loading.
//!
//! The header row names columns; every dimension and measure of the schema
//! must appear, in any order, and other columns are ignored. Categorical
//! cells are labels mapped to dense ids in first-seen order. Rows that fail
//! to parse or fall outside the schema are reported, not loaded.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::Record;
use crate::schema::{DimensionKind, Schema};

/// Label-to-id map for one categorical dimension.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Dictionary {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if ids.insert(l.clone(), i as u32).is_some() {
                return Err(Error::Corrupt {
                    what: "dictionary",
                    detail: format!("label `{l}` appears twice"),
                });
            }
        }
        Ok(Dictionary { labels, ids })
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn push(&mut self, label: &str) -> u32 {
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }
}

/// One dictionary per categorical dimension, keyed by dimension name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionaries {
    by_dim: HashMap<String, Dictionary>,
}

impl Dictionaries {
    pub fn new(schema: &Schema) -> Self {
        let by_dim = schema
            .dimensions()
            .iter()
            .filter(|d| d.is_categorical())
            .map(|d| (d.name.clone(), Dictionary::default()))
            .collect();
        Dictionaries { by_dim }
    }

    pub fn get(&self, dim: &str) -> Option<&Dictionary> {
        self.by_dim.get(dim)
    }

    pub fn lookup(&self, dim: &str, label: &str) -> Option<u32> {
        self.by_dim.get(dim)?.id(label)
    }

    /// Reads `<dir>/<dimension>.json` for every categorical dimension. A
    /// missing file means an empty dictionary.
    pub fn load(dir: &Path, schema: &Schema) -> Result<Self> {
        let mut out = Dictionaries::new(schema);
        for (name, dict) in &mut out.by_dim {
            let path = dir.join(format!("{name}.json"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
            let labels: Vec<String> = serde_json::from_str(&text)?;
            *dict = Dictionary::from_labels(labels)?;
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        for (name, dict) in &self.by_dim {
            let path = dir.join(format!("{name}.json"));
            let tmp = dir.join(format!(".{name}.json.tmp"));
            fs::write(&tmp, serde_json::to_vec_pretty(&dict.labels)?).map_err(Error::io(&tmp))?;
            fs::rename(&tmp, &path).map_err(Error::io(&path))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records: Vec<Record>,
    pub rejects: Vec<Rejection>,
    /// Data rows read, accepted or not.
    pub rows: u64,
}

enum Column {
    Dimension(usize),
    Measure(usize),
}

/// Parses CSV rows into records, extending `dicts` with labels seen for the
/// first time. A row's new labels are only kept if the whole row is accepted.
pub fn read_csv<R: Read>(input: R, schema: &Schema, dicts: &mut Dictionaries) -> Result<IngestOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();

    let mut columns: Vec<Option<usize>> = vec![None; schema.dims() + schema.measure_count()];
    for (pos, name) in header.iter().enumerate() {
        let col = schema
            .dimension_index(name)
            .map(Column::Dimension)
            .or_else(|| schema.measure_index(name).map(Column::Measure));
        let slot = match col {
            Some(Column::Dimension(i)) => i,
            Some(Column::Measure(m)) => schema.dims() + m,
            None => continue,
        };
        if columns[slot].replace(pos).is_some() {
            return Err(Error::InvalidRecord(format!(
                "column `{name}` appears twice in the header"
            )));
        }
    }
    let missing: Vec<&str> = schema
        .dimensions()
        .iter()
        .map(|d| d.name.as_str())
        .chain(schema.measures().iter().map(String::as_str))
        .zip(&columns)
        .filter(|(_, c)| c.is_none())
        .map(|(n, _)| n)
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidRecord(format!(
            "CSV header lacks columns: {}",
            missing.join(", ")
        )));
    }
    let columns: Vec<usize> = columns.into_iter().map(|c| c.expect("checked above")).collect();

    let mut out = IngestOutcome::default();
    let mut row = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                // Malformed UTF-8 and the like: report the row and go on.
                out.rows += 1;
                out.rejects.push(Rejection {
                    line: e.position().map_or(line, |p| p.line()),
                    reason: e.to_string(),
                });
                continue;
            }
        }
        out.rows += 1;
        let line = row.position().map_or(line, |p| p.line());
        match parse_row(&row, &columns, schema, dicts) {
            Ok((record, new_labels)) => {
                for (dim, label) in new_labels {
                    dicts
                        .by_dim
                        .get_mut(&schema.dimensions()[dim].name)
                        .expect("categorical dimension has a dictionary")
                        .push(&label);
                }
                out.records.push(record);
            }
            Err(reason) => out.rejects.push(Rejection { line, reason }),
        }
    }
    Ok(out)
}

type ParsedRow = (Record, Vec<(usize, String)>);

fn parse_row(
    row: &csv::StringRecord,
    columns: &[usize],
    schema: &Schema,
    dicts: &Dictionaries,
) -> std::result::Result<ParsedRow, String> {
    let field = |slot: usize| -> std::result::Result<&str, String> {
        row.get(columns[slot])
            .ok_or_else(|| format!("row has {} fields, expected at least {}", row.len(), columns[slot] + 1))
    };
    let mut coords = Vec::with_capacity(schema.dims());
    let mut new_labels: Vec<(usize, String)> = Vec::new();
    for (i, spec) in schema.dimensions().iter().enumerate() {
        let text = field(i)?;
        let value = match spec.kind {
            DimensionKind::Categorical { cardinality } => {
                let dict = dicts.get(&spec.name).expect("categorical dimension has a dictionary");
                match dict.id(text) {
                    Some(id) => f64::from(id),
                    None => {
                        if text.is_empty() {
                            return Err(format!("empty label for `{}`", spec.name));
                        }
                        let pending = new_labels.iter().filter(|(d, _)| *d == i).count();
                        let id = dict.len() + pending;
                        if id >= cardinality as usize {
                            return Err(format!(
                                "label `{text}` would exceed the cardinality {cardinality} of `{}`",
                                spec.name
                            ));
                        }
                        new_labels.push((i, text.to_owned()));
                        id as f64
                    }
                }
            }
            DimensionKind::Continuous { lo, hi } => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| format!("`{text}` is not a number for `{}`", spec.name))?;
                if !(lo..=hi).contains(&v) {
                    return Err(format!("{v} outside [{lo}, {hi}] for `{}`", spec.name));
                }
                v
            }
        };
        coords.push(value);
    }
    let mut measures = Vec::with_capacity(schema.measure_count());
    for (m, name) in schema.measures().iter().enumerate() {
        let text = field(schema.dims() + m)?;
        let v: f64 = text
            .parse()
            .map_err(|_| format!("`{text}` is not a number for `{name}`"))?;
        if !v.is_finite() {
            return Err(format!("measure `{name}` is not finite"));
        }
        measures.push(v);
    }
    Ok((Record::new(coords, measures), new_labels))
}

pub fn ingest_csv(path: &Path, schema: &Schema, dicts: &mut Dictionaries) -> Result<IngestOutcome> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    read_csv(std::io::BufReader::new(file), schema, dicts)
}

/// Writes records with categorical ids rendered through `dicts` when a label
/// exists and as the bare id otherwise.
pub fn write_csv<W: Write>(out: W, records: &[Record], schema: &Schema, dicts: Option<&Dictionaries>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(
        schema
            .dimensions()
            .iter()
            .map(|d| d.name.as_str())
            .chain(schema.measures().iter().map(String::as_str)),
    )?;
    let mut fields: Vec<String> = Vec::with_capacity(schema.dims() + schema.measure_count());
    for r in records {
        fields.clear();
        for (spec, &v) in schema.dimensions().iter().zip(&r.coords) {
            let label = dicts
                .filter(|_| spec.is_categorical())
                .and_then(|d| d.get(&spec.name))
                .and_then(|d| d.label(v as u32));
            fields.push(match label {
                Some(l) => l.to_owned(),
                None if spec.is_categorical() => format!("{}", v as u32),
                None => v.to_string(),
            });
        }
        fields.extend(r.measures.iter().map(f64::to_string));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_rejects(path: &Path, rejects: &[Rejection]) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(rejects)?).map_err(Error::io(path))
}
