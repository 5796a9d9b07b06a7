//! CSV and JSON ingestion and emission.
//!
//! A data file has a header row. Covariate columns come first; the response
//! is a column `t` for fully observed data, or columns `y` and `delta` for
//! right-censored data. A schema file declares each covariate column:
//!
//! ```json
//! {"covariates": [{"name": "x1", "type": "continuous"},
//!                 {"name": "x2", "type": "categorical", "levels": 3}]}
//! ```
//!
//! Without a schema every non-response column is a continuous covariate.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};

pub const RESPONSE: &str = "t";
pub const TIME: &str = "y";
pub const EVENT: &str = "delta";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub covariates: Vec<ColumnSpec>,
}

impl Schema {
    pub fn of(data: &Dataset) -> Schema {
        Schema {
            covariates: data
                .names()
                .iter()
                .zip(data.kinds())
                .map(|(name, &kind)| ColumnSpec { name: name.clone(), kind })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Schema> {
        let s: Schema = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::InvalidDataset("schema declares no covariates".into()));
        }
        for (k, c) in self.covariates.iter().enumerate() {
            if [RESPONSE, TIME, EVENT].contains(&c.name.as_str()) {
                return Err(Error::InvalidDataset(format!("'{}' is reserved for the response", c.name)));
            }
            if self.covariates[..k].iter().any(|d| d.name == c.name) {
                return Err(Error::InvalidDataset(format!("duplicate column '{}'", c.name)));
            }
            if let ColumnKind::Categorical { levels } = c.kind {
                if levels == 0 || levels > crate::data::MAX_LEVELS {
                    return Err(Error::InvalidDataset(format!("column '{}' declares {levels} levels", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schema> {
        Schema::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A rectangular table of unparsed cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_csv(reader: impl Read) -> Result<RawTable> {
        let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        Ok(RawTable { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Whether a table must carry response columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    Required,
    /// Response columns are read if present; otherwise every response is set
    /// to 1 and the table is usable only as prediction covariates.
    Optional,
}

fn parse_number(cell: &str, column: &str, row: usize) -> Result<f64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return Err(Error::MissingValue { column: column.into(), row });
    }
    cell.parse::<f64>()
        .map_err(|_| Error::Format(format!("column '{column}', row {row}: '{cell}' is not a number")))
}

fn parse_event(cell: &str, row: usize) -> Result<bool> {
    match cell.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(false),
        Ok(v) if v == 1.0 => Ok(true),
        _ => Err(Error::InvalidEventIndicator { row, value: cell.into() }),
    }
}

/// Builds a dataset from raw rows, enforcing every dataset invariant.
pub fn validate_dataset(raw: &RawTable, schema: Option<&Schema>, mode: ResponseMode) -> Result<Dataset> {
    let width = raw.header.len();
    if let Some((i, r)) = raw.rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::DimensionMismatch(format!("row {i} has {} cells, header has {width}", r.len())));
    }
    for (k, h) in raw.header.iter().enumerate() {
        if raw.header[..k].contains(h) {
            return Err(Error::DimensionMismatch(format!("duplicate column '{h}'")));
        }
    }
    let t = raw.column(RESPONSE);
    let (y, delta) = (raw.column(TIME), raw.column(EVENT));
    let response: Vec<usize> = [t, y, delta].into_iter().flatten().collect();
    let survival = match (t, y, delta) {
        (Some(_), None, None) => Some(false),
        (None, Some(_), Some(_)) => Some(true),
        (None, None, None) if mode == ResponseMode::Optional => None,
        _ => {
            return Err(Error::DimensionMismatch(
                "expected a response column 't' or the pair 'y', 'delta'".into(),
            ))
        }
    };
    let specs: Vec<ColumnSpec> = match schema {
        Some(s) => {
            s.validate()?;
            let declared = s.covariates.len() + response.len();
            if declared != width {
                return Err(Error::DimensionMismatch(format!(
                    "schema declares {} covariates, table has {} non-response columns",
                    s.covariates.len(),
                    width - response.len()
                )));
            }
            s.covariates.clone()
        }
        None => (0..width)
            .filter(|k| !response.contains(k))
            .map(|k| ColumnSpec { name: raw.header[k].clone(), kind: ColumnKind::Continuous })
            .collect(),
    };
    let mut columns = Vec::with_capacity(specs.len());
    for s in &specs {
        let k = raw
            .column(&s.name)
            .ok_or_else(|| Error::DimensionMismatch(format!("column '{}' missing from table", s.name)))?;
        columns.push(raw.rows.iter().enumerate().map(|(i, r)| parse_number(&r[k], &s.name, i)).collect::<Result<Vec<_>>>()?);
    }
    let (resp, events) = match survival {
        None => (vec![1.0; raw.rows.len()], None),
        Some(false) => {
            let k = t.expect("regression");
            (raw.rows.iter().enumerate().map(|(i, r)| parse_number(&r[k], RESPONSE, i)).collect::<Result<_>>()?, None)
        }
        Some(true) => {
            let (ky, kd) = (y.expect("survival"), delta.expect("survival"));
            let ev = raw.rows.iter().enumerate().map(|(i, r)| parse_event(&r[kd], i)).collect::<Result<Vec<_>>>()?;
            let yv = raw.rows.iter().enumerate().map(|(i, r)| parse_number(&r[ky], TIME, i)).collect::<Result<_>>()?;
            (yv, Some(ev))
        }
    };
    let (names, kinds) = specs.into_iter().map(|s| (s.name, s.kind)).unzip();
    Dataset::new(names, kinds, columns, resp, events)
}

pub fn parse_dataset_csv(reader: impl Read, schema: Option<&Schema>, mode: ResponseMode) -> Result<Dataset> {
    validate_dataset(&RawTable::from_csv(reader)?, schema, mode)
}

pub fn read_dataset(path: impl AsRef<Path>, schema: Option<&Schema>, mode: ResponseMode) -> Result<Dataset> {
    parse_dataset_csv(std::fs::File::open(path)?, schema, mode)
}

/// Writes `data` in the ingestion layout. Floats use the shortest
/// representation that reads back to the same value.
pub fn write_dataset_csv(data: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = data.names().to_vec();
    if data.is_survival() {
        header.extend([TIME.to_owned(), EVENT.to_owned()]);
    } else {
        header.push(RESPONSE.to_owned());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.p()).map(|j| data.value(i, j).to_string()).collect();
        rec.push(data.response()[i].to_string());
        if data.is_survival() {
            rec.push(if data.is_event(i) { "1" } else { "0" }.to_owned());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_csv(data, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Formats an optional value, writing `NA` for `None`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}
